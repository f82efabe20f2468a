pub mod convexbody;
pub mod critical;
pub mod geodesic;
pub mod lemma;
pub mod optim;
pub mod shortening;
pub mod spline;
pub mod surface;
pub mod width;
