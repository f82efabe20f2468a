//! `spherewidth` command-line front end.
//!
//! Exit codes: 0 success, 1 usage (bad flags, unreadable or malformed
//! inputs), 2 domain errors raised by the computation itself.

mod output;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use spherewidth::convexbody::{self, ConvexBody};
use spherewidth::critical;
use spherewidth::geodesic::{self, Geodesic};
use spherewidth::lemma;
use spherewidth::shortening::{self, FlowKind};
use spherewidth::surface::{ChartPoint, Surface, SurfaceConfig, BUILTINS};
use spherewidth::width::{self, EstimateOptions, PairingMap};

use output::{curve_rows, num, svg, to_json, write_csv, write_json};

#[derive(Parser)]
#[command(name = "spherewidth", version, about = "Min-max distance width of 2-spheres and convex bodies")]
struct Cli {
    /// Worker threads (default: logical cores). SPHEREWIDTH_THREADS takes precedence.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Write a run manifest (command, input hash, version, wall time) here.
    #[arg(long, global = true, value_name = "FILE")]
    manifest: Option<PathBuf>,
    /// Write the JSON report to this file instead of stdout.
    #[arg(long, global = true, value_name = "FILE")]
    json: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Built-in surfaces and surface descriptions.
    #[command(subcommand)]
    Surface(SurfaceCmd),
    /// Geodesic shooting, connection and closed-geodesic index.
    #[command(subcommand)]
    Geodesic(GeodesicCmd),
    /// Distance between two points with all minimizers.
    Dist(PairArgs),
    /// Critical-pair classification and refinement.
    #[command(subcommand)]
    Critical(CriticalCmd),
    /// Birkhoff curve shortening.
    #[command(subcommand)]
    Shorten(ShortenCmd),
    /// Width bounds, eccentricity scans and the closed-geodesic comparison.
    #[command(subcommand)]
    Width(WidthCmd),
    /// Classical width and orthogonal chords of convex bodies.
    #[command(subcommand)]
    Convex(ConvexCmd),
    /// Checks of the four-vector lemma.
    #[command(subcommand)]
    Lemma(LemmaCmd),
}

#[derive(Args, Clone)]
struct SurfaceArg {
    /// Surface JSON file or builtin name (round, prolate, oblate, calabi_croke, dumbbell).
    #[arg(long, value_name = "FILE|NAME")]
    surface: String,
}

#[derive(Args)]
struct PairArgs {
    #[command(flatten)]
    surface: SurfaceArg,
    /// First point: anchor name, `u,v` (chart 0) or `u,v,chart`.
    #[arg(long, allow_hyphen_values = true)]
    x: String,
    /// Second point.
    #[arg(long, allow_hyphen_values = true)]
    y: String,
    #[arg(long, default_value_t = geodesic::DEFAULT_REL_TOL)]
    rel_tol: f64,
}

#[derive(Subcommand)]
enum SurfaceCmd {
    /// List builtin surfaces.
    List,
    /// Describe a surface: kind parameters, scale, anchors.
    Info(SurfaceArg),
}

#[derive(Args)]
struct CurveOut {
    /// Write samples (s, chart, u, v) as CSV.
    #[arg(long, value_name = "FILE")]
    csv: Option<PathBuf>,
    /// Write a chart-plane SVG.
    #[arg(long, value_name = "FILE")]
    svg: Option<PathBuf>,
}

#[derive(Subcommand)]
enum GeodesicCmd {
    /// Integrate a unit-speed geodesic from a point.
    Shoot {
        #[command(flatten)]
        surface: SurfaceArg,
        #[arg(long, allow_hyphen_values = true)]
        from: String,
        /// Initial angle in the orthonormal frame at the start point.
        #[arg(long, allow_hyphen_values = true, conflicts_with = "dir")]
        angle: Option<f64>,
        /// Initial chart direction `du,dv` (normalized).
        #[arg(long, allow_hyphen_values = true)]
        dir: Option<String>,
        #[arg(long)]
        length: f64,
        #[command(flatten)]
        out: CurveOut,
    },
    /// All geodesics from one point to another up to the connection bound.
    Connect {
        #[command(flatten)]
        surface: SurfaceArg,
        #[arg(long, allow_hyphen_values = true)]
        from: String,
        #[arg(long, allow_hyphen_values = true)]
        to: String,
        #[arg(long, default_value_t = geodesic::DISTANCE_STARTS)]
        starts: usize,
        #[arg(long, default_value_t = geodesic::DEFAULT_REL_TOL)]
        rel_tol: f64,
        #[command(flatten)]
        out: CurveOut,
    },
    /// Morse index and nullity of a closed geodesic given as a sampled curve.
    Index {
        #[command(flatten)]
        surface: SurfaceArg,
        /// CSV with rows (s, chart, u, v), starting at the base point.
        #[arg(long, value_name = "FILE")]
        curve: PathBuf,
        #[arg(long, default_value_t = shortening::INDEX_GRID)]
        grid: usize,
        /// Period; defaults to the arc-length span of the curve.
        #[arg(long)]
        length: Option<f64>,
    },
}

#[derive(Subcommand)]
enum CriticalCmd {
    /// Regular or critical, with the stationarity certificate.
    Classify(PairArgs),
    /// Search near a pair for a critical pair.
    Refine {
        #[command(flatten)]
        pair: PairArgs,
        /// Search radius relative to the surface scale.
        #[arg(long, default_value_t = 0.1)]
        radius: f64,
    },
}

#[derive(Subcommand)]
enum ShortenCmd {
    /// Run the flow from a seed loop; writes track.csv, curve.csv and curve.svg.
    Run {
        #[command(flatten)]
        surface: SurfaceArg,
        /// CSV of loop samples: rows (chart, u, v) or (s, chart, u, v), not closed.
        #[arg(long, value_name = "FILE")]
        seed_loop: PathBuf,
        #[arg(long, default_value_t = 2000)]
        max_iters: usize,
        /// Vertex count; defaults to the smallest power of two keeping arcs short.
        #[arg(long)]
        vertices: Option<usize>,
        #[arg(long, value_name = "DIR", default_value = ".")]
        out_dir: PathBuf,
        /// Also compute the index of a closed-geodesic limit.
        #[arg(long)]
        index: bool,
    },
}

#[derive(Subcommand)]
enum WidthCmd {
    /// Lower and upper bounds for the width with certificates.
    Estimate {
        #[command(flatten)]
        surface: SurfaceArg,
        #[arg(long, default_value_t = 32)]
        grid: usize,
        /// `antipodal` or a pairing-map JSON file.
        #[arg(long, default_value = "antipodal")]
        pairing: String,
        /// Also search for the shortest closed geodesic.
        #[arg(long)]
        omega1: bool,
        #[arg(long, default_value_t = 0.1)]
        refine_radius: f64,
    },
    /// Eccentricity profile m(x) over the grid.
    Scan {
        #[command(flatten)]
        surface: SurfaceArg,
        #[arg(long, default_value_t = 32)]
        grid: usize,
        /// Profile CSV (index, chart, u, v, m).
        #[arg(long, value_name = "FILE")]
        csv: Option<PathBuf>,
    },
    /// Compare the width upper bound with half the shortest closed geodesic.
    CompareOmega1 {
        #[command(flatten)]
        surface: SurfaceArg,
        #[arg(long, default_value_t = 32)]
        grid: usize,
        /// Seed loops for the closed-geodesic search.
        #[arg(long, default_value_t = 8)]
        seeds: usize,
    },
}

#[derive(Args)]
struct BodyArg {
    /// Body JSON file, or `ball` / `ellipsoid` for the unit ball and the (1.5, 1, 0.5) ellipsoid.
    #[arg(long, value_name = "FILE|NAME")]
    body: String,
    #[arg(long, default_value_t = 24)]
    grid: usize,
    /// Chord list CSV.
    #[arg(long, value_name = "FILE")]
    csv: Option<PathBuf>,
}

#[derive(Subcommand)]
enum ConvexCmd {
    /// Classical width, its direction and the chord equivalence check.
    Width(BodyArg),
    /// Orthogonal chords sorted by length.
    Chords(BodyArg),
}

#[derive(Subcommand)]
enum LemmaCmd {
    /// Random configurations checked for a spanning triple.
    Fuzz {
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Roots of the squared polynomial and their residuals.
    Roots {
        #[arg(long, value_name = "a,b,c,d")]
        lambda: String,
    },
    /// Grid sweep showing the angle inequalities have no joint solution.
    Infeasible {
        #[arg(long, value_name = "a,b,c,d")]
        lambda: String,
        #[arg(long, default_value_t = 300)]
        grid: usize,
    },
}

enum Failure {
    Usage(String),
    Domain(String),
}

type Res<T> = Result<T, Failure>;

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn domain(e: impl std::fmt::Display) -> Failure {
    Failure::Domain(e.to_string())
}

/// Hashes of the inputs that determine the run, for the manifest.
#[derive(Default)]
struct Inputs {
    hasher: Sha256,
    seed: Option<u64>,
}

impl Inputs {
    fn add(&mut self, bytes: &[u8]) {
        self.hasher.update((bytes.len() as u64).to_le_bytes());
        self.hasher.update(bytes);
    }
}

fn load_surface(arg: &SurfaceArg, inputs: &mut Inputs) -> Res<Surface> {
    let path = Path::new(&arg.surface);
    if path.is_file() {
        let text = fs::read(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        inputs.add(&text);
        let cfg: SurfaceConfig =
            serde_json::from_slice(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        return Surface::from_config(&cfg).map_err(|e| usage(format!("{}: {e}", path.display())));
    }
    inputs.add(arg.surface.as_bytes());
    Surface::builtin(&arg.surface).map_err(|_| {
        usage(format!("{:?} is neither a readable file nor a builtin ({})", arg.surface, BUILTINS.join(", ")))
    })
}

fn parse_point(s: &Surface, text: &str) -> Res<ChartPoint> {
    if let Ok(p) = s.anchor(text) {
        return Ok(s.normalize(&p));
    }
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    let bad = || usage(format!("cannot parse point {text:?}: expected an anchor, `u,v` or `u,v,chart`"));
    let f = |t: &str| t.parse::<f64>().map_err(|_| bad());
    let p = match parts.as_slice() {
        [u, v] => ChartPoint::new(0, f(u)?, f(v)?),
        [u, v, c] => {
            let c: u8 = c.parse().map_err(|_| bad())?;
            if c > 1 {
                return Err(bad());
            }
            ChartPoint::new(c, f(u)?, f(v)?)
        }
        _ => return Err(bad()),
    };
    if !(p.u.is_finite() && p.v.is_finite()) {
        return Err(bad());
    }
    Ok(s.normalize(&p))
}

fn parse_floats<const N: usize>(text: &str) -> Res<[f64; N]> {
    let v: Vec<f64> = text
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| usage(format!("expected {N} comma-separated numbers, got {text:?}")))?;
    v.try_into().map_err(|_| usage(format!("expected {N} comma-separated numbers, got {text:?}")))
}

/// Numeric rows of a CSV file; non-numeric rows (headers) are skipped.
fn read_rows(path: &Path, inputs: &mut Inputs) -> Res<Vec<Vec<f64>>> {
    let text = fs::read(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    inputs.add(&text);
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(text.as_slice());
    let mut rows = vec![];
    for rec in rdr.records() {
        let rec = rec.map_err(|e| usage(format!("{}: {e}", path.display())))?;
        if let Ok(r) = rec.iter().map(|c| c.trim().parse::<f64>()).collect::<Result<Vec<f64>, _>>() {
            rows.push(r);
        }
    }
    Ok(rows)
}

fn row_point(r: &[f64]) -> Res<(Option<f64>, ChartPoint)> {
    let (s, c, u, v) = match r {
        [c, u, v] => (None, *c, *u, *v),
        [s, c, u, v] => (Some(*s), *c, *u, *v),
        _ => return Err(usage(format!("curve rows need 3 or 4 columns, got {}", r.len()))),
    };
    if c != 0.0 && c != 1.0 {
        return Err(usage(format!("chart id must be 0 or 1, got {c}")));
    }
    Ok((s, ChartPoint::new(c as u8, u, v)))
}

fn geodesic_curve(g: &Geodesic) -> Vec<(f64, ChartPoint)> {
    g.samples.iter().map(|x| (x.s, x.p)).collect()
}

fn write_curve_outputs(out: &CurveOut, curves: &[Vec<(f64, ChartPoint)>], title: &str) -> Res<()> {
    if let Some(path) = &out.csv {
        let rows = curves.first().map(|c| curve_rows(c)).unwrap_or_default();
        write_csv(path, &["s", "chart", "u", "v"], &rows).map_err(usage)?;
    }
    if let Some(path) = &out.svg {
        let pts: Vec<Vec<ChartPoint>> = curves.iter().map(|c| c.iter().map(|p| p.1).collect()).collect();
        fs::write(path, svg(&pts, title)).map_err(usage)?;
    }
    Ok(())
}

fn geodesic_summary(g: &Geodesic) -> serde_json::Value {
    json!({
        "length": g.length,
        "start": g.start(),
        "end": g.end(),
        "start_angle": g.start_angle,
        "samples": g.samples.len(),
    })
}

fn load_body(arg: &BodyArg, inputs: &mut Inputs) -> Res<ConvexBody> {
    let path = Path::new(&arg.body);
    let body = if path.is_file() {
        let text = fs::read(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        inputs.add(&text);
        serde_json::from_slice::<ConvexBody>(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?
    } else {
        inputs.add(arg.body.as_bytes());
        match arg.body.as_str() {
            "ball" => ConvexBody::Ball { radius: 1.0 },
            "ellipsoid" => ConvexBody::Ellipsoid { semi_axes: [1.5, 1.0, 0.5] },
            other => return Err(usage(format!("{other:?} is neither a readable file nor `ball`/`ellipsoid`"))),
        }
    };
    body.validate().map_err(usage)?;
    Ok(body)
}

fn chord_rows(chords: &[convexbody::Chord]) -> Vec<Vec<String>> {
    chords
        .iter()
        .map(|c| {
            let mut r = vec![num(c.length)];
            r.extend(c.x1.iter().chain(&c.x2).chain(&c.direction).map(|v| num(*v)));
            r
        })
        .collect()
}

const CHORD_HEADER: [&str; 10] = ["length", "x1", "y1", "z1", "x2", "y2", "z2", "dx", "dy", "dz"];

/// Unit tangent at the first sample from a second-order one-sided difference.
fn initial_tangent(s: &Surface, pts: &[(f64, ChartPoint)]) -> Res<(ChartPoint, [f64; 2])> {
    let p0 = pts[0].1;
    let mut near = vec![];
    for (t, q) in &pts[1..] {
        if *t > pts[0].0 + 1e-12 && near.last().is_none_or(|(tl, _): &(f64, ChartPoint)| *t > tl + 1e-12) {
            let q = s.in_chart_of(&p0, q).ok_or_else(|| usage("curve leaves the chart of its base point"))?;
            near.push((*t, q));
        }
        if near.len() == 2 {
            break;
        }
    }
    if near.len() < 2 {
        return Err(usage("curve needs at least three distinct samples"));
    }
    let (h1, h2) = (near[0].0 - pts[0].0, near[1].0 - pts[0].0);
    let (a, b, c) = (-(h1 + h2) / (h1 * h2), h2 / (h1 * (h2 - h1)), -h1 / (h2 * (h2 - h1)));
    let d = [a * p0.u + b * near[0].1.u + c * near[1].1.u, a * p0.v + b * near[0].1.v + c * near[1].1.v];
    let n = geodesic::g_norm(s, &p0, d);
    if !(n > 0.0) {
        return Err(usage("degenerate tangent at the curve start"));
    }
    Ok((p0, [d[0] / n, d[1] / n]))
}

fn run(cli: &Cli, inputs: &mut Inputs) -> Res<String> {
    let report = match &cli.command {
        Command::Surface(SurfaceCmd::List) => {
            let list: Vec<serde_json::Value> = BUILTINS
                .iter()
                .map(|n| {
                    let s = Surface::builtin(n).expect("builtin");
                    json!({"name": n, "label": s.name, "inj_lower": s.inj_lower, "scale": s.scale(), "smooth": s.is_smooth()})
                })
                .collect();
            to_json(&list)
        }
        Command::Surface(SurfaceCmd::Info(arg)) => {
            let s = load_surface(arg, inputs)?;
            let anchors: Vec<&str> = if s.is_smooth() {
                vec!["north", "south", "equator:phi", "polar:u,phi"]
                    .into_iter()
                    .chain(s.neck().map(|_| "neck:phi"))
                    .collect()
            } else {
                vec!["bary_A", "bary_B", "face:A,x,y", "face:B,x,y"]
            };
            let mut params = s.to_config().map(|c| c.params).unwrap_or(serde_json::Value::Null);
            if let Some(o) = params.as_object_mut() {
                // Profile tables are long; report their size instead.
                for key in ["t", "f"] {
                    if let Some(v) = o.get(key).and_then(|v| v.as_array()).map(|a| a.len()) {
                        o.insert(key.into(), json!({ "knots": v }));
                    }
                }
            }
            to_json(&json!({
                "name": s.name,
                "params": params,
                "inj_lower": s.inj_lower,
                "scale": s.scale(),
                "smooth": s.is_smooth(),
                "revolution": s.is_revolution(),
                "neck": s.neck(),
                "cone_points": s.cone_points(),
                "anchors": anchors,
            }))
        }
        Command::Geodesic(GeodesicCmd::Shoot { surface, from, angle, dir, length, out }) => {
            let s = load_surface(surface, inputs)?;
            let p = parse_point(&s, from)?;
            if !(length.is_finite() && *length > 0.0) {
                return Err(usage("--length must be positive"));
            }
            let g = match (angle, dir) {
                (_, Some(d)) => {
                    let d = parse_floats::<2>(d)?;
                    let n = geodesic::g_norm(&s, &p, d);
                    if !(n > 0.0) {
                        return Err(usage("--dir must be non-zero"));
                    }
                    geodesic::integrate(&s, &p, [d[0] / n, d[1] / n], *length)
                }
                (a, None) => geodesic::integrate_angle(&s, &p, a.unwrap_or(0.0), *length),
            }
            .map_err(domain)?;
            write_curve_outputs(out, &[geodesic_curve(&g)], "geodesic")?;
            to_json(&geodesic_summary(&g))
        }
        Command::Geodesic(GeodesicCmd::Connect { surface, from, to, starts, rel_tol, out }) => {
            let s = load_surface(surface, inputs)?;
            let (x, y) = (parse_point(&s, from)?, parse_point(&s, to)?);
            let r = geodesic::distance_with(&s, &x, &y, *rel_tol, (*starts).max(4)).map_err(domain)?;
            let curves: Vec<_> = r.minimizers.iter().map(geodesic_curve).collect();
            write_curve_outputs(out, &curves, "minimizing geodesics")?;
            to_json(&json!({
                "distance": r.d,
                "count": r.minimizers.len(),
                "degenerate_family": r.degenerate_family,
                "geodesics": r.minimizers.iter().map(geodesic_summary).collect::<Vec<_>>(),
            }))
        }
        Command::Geodesic(GeodesicCmd::Index { surface, curve, grid, length }) => {
            let s = load_surface(surface, inputs)?;
            let rows = read_rows(curve, inputs)?;
            let pts = rows.iter().map(|r| row_point(r)).collect::<Res<Vec<_>>>()?;
            if pts.iter().any(|p| p.0.is_none()) || pts.len() < 3 {
                return Err(usage("index needs rows (s, chart, u, v)"));
            }
            let pts: Vec<(f64, ChartPoint)> = pts.into_iter().map(|(t, p)| (t.unwrap(), p)).collect();
            let period = length.unwrap_or(pts[pts.len() - 1].0 - pts[0].0);
            if !(period > 0.0) {
                return Err(usage("curve period must be positive"));
            }
            let (p, t) = initial_tangent(&s, &pts)?;
            let (g, defect) = shortening::close_geodesic(&s, &p, t, period)
                .ok_or_else(|| domain("the curve does not close up to a geodesic"))?;
            if defect >= shortening::CLOSURE_TOL {
                return Err(domain(format!("closure defect {defect:e} exceeds {:e}", shortening::CLOSURE_TOL)));
            }
            let sp = shortening::closed_geodesic_index(&s, &g, *grid).map_err(domain)?;
            to_json(&json!({
                "length": g.length,
                "closure_defect": defect,
                "grid": grid,
                "spectrum_head": sp.eigenvalues.iter().take(8).collect::<Vec<_>>(),
                "index": sp.index,
                "nullity": sp.nullity,
                "tol_zero": sp.tol_zero,
            }))
        }
        Command::Dist(a) => {
            let s = load_surface(&a.surface, inputs)?;
            let (x, y) = (parse_point(&s, &a.x)?, parse_point(&s, &a.y)?);
            let r = geodesic::distance(&s, &x, &y, a.rel_tol).map_err(domain)?;
            to_json(&json!({
                "distance": r.d,
                "minimizers": r.minimizers.len(),
                "degenerate_family": r.degenerate_family,
                "initial_angles": r.minimizers.iter().map(|g| g.start_angle).collect::<Vec<_>>(),
            }))
        }
        Command::Critical(CriticalCmd::Classify(a)) => {
            let s = load_surface(&a.surface, inputs)?;
            let (x, y) = (parse_point(&s, &a.x)?, parse_point(&s, &a.y)?);
            let c = critical::classify_pair_tol(&s, &x, &y, a.rel_tol).map_err(domain)?;
            to_json(&c)
        }
        Command::Critical(CriticalCmd::Refine { pair, radius }) => {
            let s = load_surface(&pair.surface, inputs)?;
            let (x, y) = (parse_point(&s, &pair.x)?, parse_point(&s, &pair.y)?);
            let r = critical::refine_critical(&s, &x, &y, radius * s.scale()).map_err(domain)?;
            to_json(&r)
        }
        Command::Shorten(ShortenCmd::Run { surface, seed_loop, max_iters, vertices, out_dir, index }) => {
            let s = load_surface(surface, inputs)?;
            let rows = read_rows(seed_loop, inputs)?;
            let pts: Vec<ChartPoint> = rows.iter().map(|r| row_point(r).map(|p| p.1)).collect::<Res<_>>()?;
            if pts.len() < 3 {
                return Err(usage("seed loop needs at least three samples"));
            }
            let n = vertices.unwrap_or_else(|| shortening::default_vertex_count(&s, &pts));
            let lp = shortening::discretize_loop(&s, &pts, n).map_err(domain)?;
            let flow = shortening::birkhoff_flow(&s, &lp, *max_iters, shortening::point_tolerance(&s)).map_err(domain)?;
            fs::create_dir_all(out_dir).map_err(usage)?;
            let track: Vec<Vec<String>> = flow.track.iter().map(|(i, l)| vec![i.to_string(), num(*l)]).collect();
            write_csv(&out_dir.join("track.csv"), &["iteration", "length"], &track).map_err(usage)?;
            let curve = match &flow.kind {
                FlowKind::ConvergedToClosedGeodesic { geodesic, .. } => geodesic_curve(geodesic),
                _ => flow.final_loop.samples(),
            };
            write_csv(&out_dir.join("curve.csv"), &["s", "chart", "u", "v"], &curve_rows(&curve)).map_err(usage)?;
            let seed: Vec<ChartPoint> = pts.iter().chain(pts.first()).copied().collect();
            let drawn = vec![seed, curve.iter().map(|p| p.1).collect()];
            fs::write(out_dir.join("curve.svg"), svg(&drawn, "seed loop and final curve")).map_err(usage)?;
            let (kind, closure, idx) = match &flow.kind {
                FlowKind::ConvergedToPoint(p) => (json!({"point": p}), None, None),
                FlowKind::ConvergedToClosedGeodesic { geodesic, closure_defect } => {
                    let idx = if *index {
                        let sp = shortening::closed_geodesic_index(&s, geodesic, shortening::INDEX_GRID)
                            .map_err(domain)?;
                        Some(json!({"index": sp.index, "nullity": sp.nullity}))
                    } else {
                        None
                    };
                    (json!({"closed_geodesic": {"length": geodesic.length}}), Some(*closure_defect), idx)
                }
                FlowKind::MaxIters => (json!("max_iters"), None, None),
            };
            to_json(&json!({
                "outcome": kind,
                "vertices": n,
                "iterations": flow.track.last().map(|t| t.0).unwrap_or(0),
                "initial_length": flow.track[0].1,
                "final_length": flow.final_loop.total_length,
                "max_increase": flow.max_increase(),
                "closure_defect": closure,
                "index": idx,
            }))
        }
        Command::Width(WidthCmd::Estimate { surface, grid, pairing, omega1, refine_radius }) => {
            let s = load_surface(surface, inputs)?;
            let map = load_pairing(pairing, inputs)?;
            let opts = EstimateOptions { grid: *grid, pairing: map, omega1: *omega1, refine_radius: *refine_radius };
            let est = width::estimate_width(&s, &opts).map_err(domain)?;
            #[derive(Serialize)]
            struct Report<'a> {
                lower: f64,
                upper: f64,
                certified: bool,
                witness: &'a width::Witness,
                certificates: Option<&'a [width::ComponentCertificate]>,
                omega1_proxy: Option<f64>,
                detail: &'a width::WidthEstimate,
            }
            to_json(&Report {
                lower: est.lower.value,
                upper: est.upper.value,
                certified: est.certified,
                witness: &est.witness,
                certificates: est.critical.as_ref().map(|c| c.certificates.as_slice()),
                omega1_proxy: est.omega1_proxy,
                detail: &est,
            })
        }
        Command::Width(WidthCmd::Scan { surface, grid, csv }) => {
            let s = load_surface(surface, inputs)?;
            let r = width::reidemeister_scan(&s, *grid).map_err(domain)?;
            if let Some(path) = csv {
                let rows: Vec<Vec<String>> = r
                    .profile
                    .iter()
                    .enumerate()
                    .map(|(i, (p, m))| vec![i.to_string(), p.chart.to_string(), num(p.u), num(p.v), num(*m)])
                    .collect();
                write_csv(path, &["index", "chart", "u", "v", "m"], &rows).map_err(usage)?;
            }
            to_json(&json!({
                "grid": grid,
                "min_m": r.min_m,
                "max_m": r.max_m,
                "diameter": r.diameter,
                "width_lower": r.width_lower,
                "tol": r.tol,
                "m_constant": r.m_constant,
                "constant_width": r.constant_width,
            }))
        }
        Command::Width(WidthCmd::CompareOmega1 { surface, grid, seeds }) => {
            let s = load_surface(surface, inputs)?;
            let opts = EstimateOptions { grid: *grid, omega1: false, ..EstimateOptions::default() };
            let est = width::estimate_width(&s, &opts).map_err(domain)?;
            let c = width::compare_omega1(&s, &est, *seeds).map_err(domain)?;
            to_json(&c)
        }
        Command::Convex(ConvexCmd::Width(b)) => {
            let body = load_body(b, inputs)?;
            let w = convexbody::classical_width(&body, b.grid);
            let eq = convexbody::extrinsic_width_equivalence(&body, b.grid);
            let chords = convexbody::orthogonal_chords(&body, b.grid);
            if let Some(path) = &b.csv {
                write_csv(path, &CHORD_HEADER, &chord_rows(&chords.chords)).map_err(usage)?;
            }
            to_json(&json!({
                "width": w.width,
                "direction": w.direction,
                "equivalence": eq,
                "chords": chords.chords.iter().map(|c| c.length).collect::<Vec<_>>(),
                "degenerate_family": chords.degenerate_family,
            }))
        }
        Command::Convex(ConvexCmd::Chords(b)) => {
            let body = load_body(b, inputs)?;
            let chords = convexbody::orthogonal_chords(&body, b.grid);
            if let Some(path) = &b.csv {
                write_csv(path, &CHORD_HEADER, &chord_rows(&chords.chords)).map_err(usage)?;
            }
            to_json(&chords)
        }
        Command::Lemma(LemmaCmd::Fuzz { trials, seed }) => {
            inputs.seed = Some(*seed);
            let r = lemma::fuzz(*trials, *seed);
            if r.violations > 0 {
                // The report is still useful output; print it before failing.
                println!("{}", to_json(&r));
                return Err(domain(format!("{} lemma violations in {} trials", r.violations, r.trials)));
            }
            to_json(&r)
        }
        Command::Lemma(LemmaCmd::Roots { lambda }) => {
            let l = parse_floats::<4>(lambda)?;
            to_json(&lemma::verify_roots(l).map_err(domain)?)
        }
        Command::Lemma(LemmaCmd::Infeasible { lambda, grid }) => {
            let l = parse_floats::<4>(lambda)?;
            to_json(&lemma::angle_infeasibility(l, *grid).map_err(domain)?)
        }
    };
    Ok(report)
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Surface(SurfaceCmd::List) => "surface list",
        Command::Surface(SurfaceCmd::Info(_)) => "surface info",
        Command::Geodesic(GeodesicCmd::Shoot { .. }) => "geodesic shoot",
        Command::Geodesic(GeodesicCmd::Connect { .. }) => "geodesic connect",
        Command::Geodesic(GeodesicCmd::Index { .. }) => "geodesic index",
        Command::Dist(_) => "dist",
        Command::Critical(CriticalCmd::Classify(_)) => "critical classify",
        Command::Critical(CriticalCmd::Refine { .. }) => "critical refine",
        Command::Shorten(ShortenCmd::Run { .. }) => "shorten run",
        Command::Width(WidthCmd::Estimate { .. }) => "width estimate",
        Command::Width(WidthCmd::Scan { .. }) => "width scan",
        Command::Width(WidthCmd::CompareOmega1 { .. }) => "width compare-omega1",
        Command::Convex(ConvexCmd::Width(_)) => "convex width",
        Command::Convex(ConvexCmd::Chords(_)) => "convex chords",
        Command::Lemma(LemmaCmd::Fuzz { .. }) => "lemma fuzz",
        Command::Lemma(LemmaCmd::Roots { .. }) => "lemma roots",
        Command::Lemma(LemmaCmd::Infeasible { .. }) => "lemma infeasible",
    }
}

fn load_pairing(text: &str, inputs: &mut Inputs) -> Res<PairingMap> {
    if text == "antipodal" {
        return Ok(PairingMap::Antipodal);
    }
    let bytes = fs::read(text).map_err(|e| usage(format!("{text}: {e}")))?;
    inputs.add(&bytes);
    serde_json::from_slice(&bytes).map_err(|e| usage(format!("{text}: {e}")))
}

fn threads(cli: &Cli) -> Res<Option<usize>> {
    match std::env::var("SPHEREWIDTH_THREADS") {
        Ok(v) if !v.trim().is_empty() => {
            v.trim().parse::<usize>().map(Some).map_err(|_| usage(format!("SPHEREWIDTH_THREADS={v:?} is not a count")))
        }
        _ => Ok(cli.threads),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let started = Instant::now();
    let result = threads(&cli).and_then(|n| {
        if let Some(n) = n.filter(|n| *n > 0) {
            rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(usage)?;
        }
        let mut inputs = Inputs::default();
        let report = run(&cli, &mut inputs)?;
        match &cli.json {
            Some(path) => fs::write(path, report + "\n").map_err(usage)?,
            None => println!("{report}"),
        }
        Ok(inputs)
    });
    match result {
        Ok(inputs) => {
            if let Some(path) = &cli.manifest {
                let args: Vec<String> = std::env::args().skip(1).collect();
                let manifest = json!({
                    "command": command_name(&cli.command),
                    "arguments": args,
                    "input_sha256": hex::encode(inputs.hasher.finalize()),
                    "seed": inputs.seed,
                    "threads": rayon::current_num_threads(),
                    "tool_version": env!("CARGO_PKG_VERSION"),
                    "wall_time_s": started.elapsed().as_secs_f64(),
                });
                if let Err(e) = write_json(path, &manifest) {
                    eprintln!("error: {}: {e}", path.display());
                    return ExitCode::from(1);
                }
            }
            ExitCode::SUCCESS
        }
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Domain(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
