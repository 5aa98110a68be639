//! Resolution of surface specs into immersions.

use std::f64::consts::PI;

use carnot_core::frames::FnImmersion;
use carnot_core::surfaces::{
    holomorphic_graph, surface_from_curve, vertical_cylinder, CircleCurve, GraphSurface, Quadratic, VerticalAxisCurve,
};
use carnot_core::{DVector, FrameOptions, Gauge, Immersion, StratifiedAlgebra};
use serde_json::{json, Value};

use crate::algebra_file::{self, LoadError};
use crate::args::{GaugeArg, SurfaceArgs};
use crate::expr::Expr;
use crate::CliError;

/// Builtin names accepted by `--builtin`.
pub const BUILTINS: &[&str] = &["tubular", "ruled", "paraboloid", "holomorphic-cylinder", "circle-cylinder", "plane", "ball"];

pub struct Surface {
    pub name: String,
    pub alg: StratifiedAlgebra,
    pub im: Box<dyn Immersion>,
    pub domain: Vec<(f64, f64)>,
    pub opts: FrameOptions,
    /// Generated from a curve; meshes must keep a transversality margin.
    pub from_curve: bool,
    /// Resolved configuration, echoed into reports.
    pub params: Value,
}

fn positive(name: &str, v: f64) -> Result<f64, CliError> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(CliError::Usage(format!("--{name} must be positive, got {v}")))
    }
}

fn domain_or(args: &SurfaceArgs, default: Vec<(f64, f64)>) -> Result<Vec<(f64, f64)>, CliError> {
    let Some(d) = &args.domain else { return Ok(default) };
    if d.len() != 2 * default.len() {
        return Err(CliError::Usage(format!("--domain needs {} values (lo,hi per axis), got {}", 2 * default.len(), d.len())));
    }
    let out: Vec<(f64, f64)> = d.chunks(2).map(|c| (c[0], c[1])).collect();
    if out.iter().any(|(a, b)| !(a < b) || !a.is_finite() || !b.is_finite()) {
        return Err(CliError::Usage("--domain bounds must satisfy lo < hi on every axis".into()));
    }
    Ok(out)
}

fn frame_options(args: &SurfaceArgs, default: Gauge) -> Result<FrameOptions, CliError> {
    let gauge = match args.gauge {
        None => default,
        Some(GaugeArg::Projected) => Gauge::Projected,
        Some(GaugeArg::Jr) => Gauge::HeisenbergJR,
    };
    let mut opts = FrameOptions { gauge, ..FrameOptions::default() };
    if let Some(h) = args.step {
        opts = opts.with_step(positive("step", h)?);
    }
    Ok(opts)
}

fn algebra_for(args: &SurfaceArgs, group_dim: usize) -> Result<StratifiedAlgebra, CliError> {
    match &args.algebra {
        None => Ok(StratifiedAlgebra::heisenberg((group_dim - 1) / 2)),
        Some(path) => {
            let alg = algebra_file::load(path).map_err(|e| match e {
                LoadError::Io(m) => CliError::Io(m),
                e @ LoadError::Invalid { .. } => CliError::Usage(format!("{}: {e}", path.display())),
            })?;
            if alg.dim() != group_dim {
                return Err(CliError::Usage(format!(
                    "algebra {} has dimension {}, the surface lives in dimension {group_dim}",
                    path.display(),
                    alg.dim()
                )));
            }
            Ok(alg)
        }
    }
}

fn cube(k: usize, a: f64, b: f64) -> Vec<(f64, f64)> {
    vec![(a, b); k]
}

/// Resolves `--builtin`/`--graph` into a surface.
pub fn resolve(args: &SurfaceArgs) -> Result<Surface, CliError> {
    let (name, im, default_domain, gauge, from_curve, mut params): (String, Box<dyn Immersion>, _, _, _, Value);
    if let Some(src) = &args.graph {
        let used = Expr::variables_used(src).map_err(|e| CliError::Usage(format!("--graph: {e}")))?;
        let n = match args.n {
            Some(n) if n >= 1 => n,
            Some(_) => return Err(CliError::Usage("--n must be at least 1".into())),
            None => used.div_ceil(2).max(1),
        };
        let u = Expr::parse(src, 2 * n).map_err(|e| CliError::Usage(format!("--graph: {e}")))?;
        name = "graph".into();
        im = Box::new(GraphSurface { u });
        default_domain = cube(2 * n, -1.0, 1.0);
        gauge = Gauge::Projected;
        from_curve = false;
        params = json!({ "graph": src, "n": n });
    } else {
        let b = args.builtin.as_deref().ok_or_else(|| CliError::Usage("one of --builtin or --graph is required".into()))?;
        name = b.to_string();
        match b {
            "tubular" => {
                let r = positive("r", args.r)?;
                default_domain = vec![(0.0, 0.5 * PI * r), (0.1 * r, r)];
                let dom = domain_or(args, default_domain.clone())?;
                let s = surface_from_curve(CircleCurve { r }, dom[0]).map_err(|e| CliError::Usage(format!("tubular: {e}")))?;
                im = Box::new(s);
                gauge = Gauge::HeisenbergJR;
                from_curve = true;
                params = json!({ "r": r, "curve": "circle", "converse_signs": "b1 = -A_5^3, b3 = A_5^1" });
            }
            "ruled" => {
                if !(args.omega.is_finite() && args.omega != 0.0) {
                    return Err(CliError::Usage("--omega must be finite and non-zero".into()));
                }
                default_domain = vec![(0.0, 0.5 * PI), (0.1, 1.0)];
                let dom = domain_or(args, default_domain.clone())?;
                let s = surface_from_curve(VerticalAxisCurve { omega: args.omega }, dom[0])
                    .map_err(|e| CliError::Usage(format!("ruled: {e}")))?;
                im = Box::new(s);
                gauge = Gauge::HeisenbergJR;
                from_curve = true;
                params = json!({ "omega": args.omega, "curve": "vertical-axis", "converse_signs": "b1 = -A_5^3, b3 = A_5^1" });
            }
            "paraboloid" => {
                let n = args.n.unwrap_or(2).max(1);
                im = Box::new(GraphSurface { u: Quadratic::hyperbolic_paraboloid(n) });
                default_domain = cube(2 * n, -1.0, 1.0);
                gauge = Gauge::Projected;
                from_curve = false;
                params = json!({ "n": n });
            }
            "holomorphic-cylinder" => {
                im = Box::new(vertical_cylinder(2, 2, holomorphic_graph));
                default_domain = cube(3, -1.0, 1.0);
                gauge = Gauge::Projected;
                from_curve = false;
                params = json!({});
            }
            "circle-cylinder" => {
                let rho = positive("rho", args.rho)?;
                im = Box::new(vertical_cylinder(1, 1, move |u: &[f64]| {
                    DVector::from_vec(vec![rho * u[0].cos(), rho * u[0].sin()])
                }));
                default_domain = vec![(0.0, 2.0 * PI), (-1.0, 1.0)];
                gauge = Gauge::Projected;
                from_curve = false;
                params = json!({ "rho": rho });
            }
            "plane" => {
                im = Box::new(FnImmersion::new(3, 2, |u: &[f64]| DVector::from_vec(vec![u[0], 0.0, u[1]])));
                default_domain = cube(2, -1.0, 1.0);
                gauge = Gauge::Projected;
                from_curve = false;
                params = json!({});
            }
            "ball" => return Err(CliError::Usage("the ball builtin is only available to the mesh command".into())),
            other => {
                return Err(CliError::Usage(format!("unknown builtin {other:?}; expected one of {}", BUILTINS.join(", "))))
            }
        }
    }
    let domain = domain_or(args, default_domain)?;
    let opts = frame_options(args, gauge)?;
    let alg = algebra_for(args, im.group_dim())?;
    params["surface"] = json!(name);
    params["domain"] = json!(domain.iter().map(|&(a, b)| [a, b]).collect::<Vec<_>>());
    params["gauge"] = json!(match opts.gauge {
        Gauge::Projected => "projected",
        Gauge::HeisenbergJR => "jr",
    });
    params["fd_step"] = json!(opts.step);
    params["algebra"] = json!(args.algebra.as_ref().map(|p| p.display().to_string()));
    Ok(Surface { name, alg, im, domain, opts, from_curve, params })
}
