use std::f64::consts::PI;
use std::fs::File;
use std::io::{self, Write};
use std::path::Path;

use carnot_core::frames::adapted_frame;
use carnot_core::heisenberg::{ball_parametrization, MetricFactorEstimate, MetricFactorSampler};
use carnot_core::variation::{
    bump, first_variation_analytic, first_variation_numeric, minimality_residual, mu_measure, normal_bump_field,
    DisplacementFamily, TranslationFamily,
};
use carnot_core::{DMatrix, DVector, FrameField, QuadratureGrid, VariationFamily};
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde_json::{json, Value};

use crate::algebra_file::{self, LoadError};
use crate::args::{CheckArgs, MeshArgs, MetricFactorArgs, ValidateArgs, VariationArgs, VariationKind};
use crate::registry::{resolve, Surface};
use crate::{CliError, Outcome};

/// How many of the largest residuals a minimality report lists.
const WORST_LISTED: usize = 5;
/// How many failed nodes a report lists by coordinates.
const SKIPPED_LISTED: usize = 20;

fn emit(report: &Value, path: Option<&Path>) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(report).expect("reports serialize");
    if let Some(p) = path {
        std::fs::write(p, format!("{text}\n")).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
    }
    // a closed pipe (`carnot ... | head`) is not an error
    match writeln!(io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(CliError::Io(e.to_string())),
        _ => Ok(()),
    }
}

pub fn validate(a: &ValidateArgs) -> Result<Outcome, CliError> {
    let path = a.file.as_ref().or(a.algebra.as_ref()).ok_or_else(|| CliError::Usage("an algebra file is required".into()))?;
    let report = match algebra_file::load(path) {
        Err(LoadError::Io(m)) => return Err(CliError::Io(m)),
        Err(LoadError::Invalid { kind, detail }) => json!({
            "algebra": path.display().to_string(),
            "valid": false,
            "violations": [{ "kind": kind, "residual": null, "detail": detail }],
        }),
        Ok(alg) => {
            let r = alg.validate();
            json!({
                "algebra": path.display().to_string(),
                "valid": r.is_valid(),
                "dimension": alg.dim(),
                "layer_dims": alg.layer_dims(),
                "hausdorff_dimension": alg.hausdorff_dimension(),
                "violations": r.violations.iter().map(|v| json!({
                    "kind": format!("{:?}", v.kind),
                    "residual": v.residual,
                    "detail": v.detail,
                })).collect::<Vec<_>>(),
            })
        }
    };
    emit(&report, a.json.as_deref())?;
    let valid = report["valid"].as_bool() == Some(true);
    if !valid {
        for v in report["violations"].as_array().into_iter().flatten() {
            eprintln!("violation {}: {}", v["kind"].as_str().unwrap_or("?"), v["detail"].as_str().unwrap_or(""));
        }
    }
    Ok(Outcome::from_bool(valid))
}

/// Nodes of the uniform grid with `counts[k]` intervals on axis `k`, first
/// axis outermost.
fn uniform_nodes(domain: &[(f64, f64)], counts: &[usize]) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new()];
    for (&(lo, hi), &c) in domain.iter().zip(counts) {
        let mut next = Vec::with_capacity(out.len() * (c + 1));
        for prefix in &out {
            for i in 0..=c {
                let mut p = prefix.clone();
                p.push(lo + (hi - lo) * i as f64 / c as f64);
                next.push(p);
            }
        }
        out = next;
    }
    out
}

fn grid_counts(grid: Option<&[usize]>, dim: usize) -> Result<Vec<usize>, CliError> {
    let default = if dim <= 2 { 40 } else if dim == 3 { 12 } else { 6 };
    let counts = match grid {
        None => vec![default; dim],
        Some([k]) => vec![*k; dim],
        Some(g) if g.len() == dim => g.to_vec(),
        Some(g) => return Err(CliError::Usage(format!("--grid has {} entries, the domain has dimension {dim}", g.len()))),
    };
    if counts.contains(&0) {
        return Err(CliError::Usage("--grid entries must be positive".into()));
    }
    Ok(counts)
}

fn quad_grid(s: &Surface, q: Option<usize>) -> Result<(QuadratureGrid, usize), CliError> {
    let q = q.unwrap_or(match s.domain.len() {
        0..=2 => 16,
        3 => 8,
        _ => 6,
    });
    if q == 0 {
        return Err(CliError::Usage("--quad must be positive".into()));
    }
    let lo: Vec<f64> = s.domain.iter().map(|d| d.0).collect();
    let hi: Vec<f64> = s.domain.iter().map(|d| d.1).collect();
    Ok((QuadratureGrid::new(&lo, &hi, q)?, q))
}

pub fn check_minimality(a: &CheckArgs) -> Result<Outcome, CliError> {
    let s = resolve(&a.surface)?;
    let counts = grid_counts(a.grid.as_deref(), s.domain.len())?;
    let ff = FrameField::new(&s.alg, &*s.im, s.opts.clone());
    let mut evaluated = Vec::new();
    let mut skipped = Vec::new();
    for u in uniform_nodes(&s.domain, &counts) {
        match ff.shape_operators(&u) {
            Ok(sd) => evaluated.push((u, sd.residual(), sd.h.clone(), sd.sigma.clone())),
            Err(e) => skipped.push((u, e.to_string())),
        }
    }
    let sup = evaluated.iter().map(|e| e.1.amax()).fold(0.0f64, f64::max);
    let h_sup = evaluated.iter().map(|e| e.2.amax()).fold(0.0f64, f64::max);
    let sigma_sup = evaluated.iter().map(|e| e.3.amax()).fold(0.0f64, f64::max);
    evaluated.sort_by(|x, y| y.1.amax().total_cmp(&x.1.amax()));
    let worst: Vec<Value> = evaluated
        .iter()
        .take(WORST_LISTED)
        .map(|(u, r, h, sg)| json!({ "u": u, "residual": r.as_slice(), "h": h.as_slice(), "sigma": sg.as_slice() }))
        .collect();
    // L2 over Gauss nodes; characteristic points form a null set and are skipped
    let (qgrid, quad) = quad_grid(&s, a.quad)?;
    let mut l2_sq = 0.0;
    let mut l2_skipped = 0usize;
    for (u, w) in qgrid.nodes.iter().zip(&qgrid.weights) {
        match ff.shape_operators(u).and_then(|sd| Ok(sd.residual().norm_squared() * ff.mu_density(u)?.wedge)) {
            Ok(v) => l2_sq += w * v,
            Err(_) => l2_skipped += 1,
        }
    }
    let pass = !evaluated.is_empty() && sup < a.tol;
    let mut params = s.params.clone();
    params["grid"] = json!(counts);
    params["quad"] = json!(quad);
    params["tol"] = json!(a.tol);
    let report = json!({
        "pass": pass,
        "residual_norms": {
            "sup": sup,
            "l2": l2_sq.sqrt(),
            "l2_skipped": l2_skipped,
            "h_sup": h_sup,
            "sigma_sup": sigma_sup,
            "nodes": evaluated.len(),
            "skipped": skipped.len(),
        },
        "worst": worst,
        "skipped_nodes": skipped.iter().take(SKIPPED_LISTED).map(|(u, e)| json!({ "u": u, "error": e })).collect::<Vec<_>>(),
        "params": params,
    });
    emit(&report, a.json.as_deref())?;
    Ok(Outcome::from_bool(pass))
}

type Field<'a> = Box<dyn Fn(&[f64]) -> DVector<f64> + 'a>;

pub fn first_variation(a: &VariationArgs) -> Result<Outcome, CliError> {
    let s = resolve(&a.surface)?;
    if !(a.eps.is_finite() && a.eps > 0.0) {
        return Err(CliError::Usage("--eps must be positive".into()));
    }
    let (grid, quad) = quad_grid(&s, a.quad)?;
    let lo = grid.lo.clone();
    let hi = grid.hi.clone();
    let base = &*s.im;
    let mut params = s.params.clone();
    params["quad"] = json!(quad);
    params["eps"] = json!(a.eps);
    params["tol"] = json!(a.tol);
    params["amplitude"] = json!(a.amplitude);
    let family: Box<dyn VariationFamily + '_> = match a.variation {
        VariationKind::NormalBump => {
            let p = base.codimension();
            if a.alpha == 0 || a.alpha > p {
                return Err(CliError::Usage(format!("--alpha must lie in 1..={p}")));
            }
            let mut weights = vec![0.0; p];
            weights[a.alpha - 1] = 1.0;
            params["variation"] = json!("normal-bump");
            params["alpha"] = json!(a.alpha);
            let w: Field = Box::new(normal_bump_field(&s.alg, base, s.opts.clone(), lo, hi, weights, a.amplitude));
            Box::new(DisplacementFamily { alg: &s.alg, base, w })
        }
        VariationKind::Tangential => {
            params["variation"] = json!("tangential");
            let (alg, opts, amp) = (&s.alg, s.opts.clone(), a.amplitude);
            let w: Field = Box::new(move |u: &[f64]| {
                let fr = adapted_frame(alg, base, u, &opts).expect("base frame at a quadrature node");
                fr.tangent.column(0).into_owned() * (amp * bump(&lo, &hi, u))
            });
            Box::new(DisplacementFamily { alg: &s.alg, base, w })
        }
        VariationKind::Translation => {
            let dim = base.group_dim();
            let k = a.direction.unwrap_or(dim);
            if k == 0 || k > dim {
                return Err(CliError::Usage(format!("--direction must lie in 1..={dim}")));
            }
            params["variation"] = json!("translation");
            params["direction"] = json!(k);
            let mut w = DVector::zeros(dim);
            w[k - 1] = a.amplitude;
            Box::new(TranslationFamily { alg: &s.alg, base, w })
        }
    };
    let numeric = first_variation_numeric(&s.alg, &*family, &grid, a.eps, &s.opts)?;
    let analytic = first_variation_analytic(&s.alg, base, &*family, &grid, &s.opts)?;
    let measure = mu_measure(&s.alg, base, &grid, &s.opts)?;
    let w_sup = grid.nodes.iter().map(|u| family.field(u).amax()).fold(0.0f64, f64::max);
    let critical_bound = 1e-5 * measure * w_sup;
    let total = analytic.total();
    let rel = (numeric.central - total).abs() / numeric.central.abs().max(critical_bound).max(f64::MIN_POSITIVE);
    let critical = numeric.central.abs() < critical_bound;
    let pass = rel < a.tol && (!a.expect_critical || critical);
    params["expect_critical"] = json!(a.expect_critical);
    let residual = minimality_residual(&s.alg, base, &grid, &s.opts).ok();
    let report = json!({
        "numeric": numeric.central,
        "interior": analytic.interior,
        "boundary": analytic.boundary,
        "analytic_total": total,
        "numeric_richardson": numeric.richardson,
        "relative_disagreement": rel,
        "measure": measure,
        "w_sup": w_sup,
        "critical_bound": critical_bound,
        "critical": critical,
        "pass": pass,
        "residual_norms": residual.map(|r| json!({
            "sup": r.sup, "l2": r.l2, "h_sup": r.h_sup, "sigma_sup": r.sigma_sup, "nodes": r.nodes,
        })),
        "params": params,
    });
    emit(&report, a.json.as_deref())?;
    Ok(Outcome::from_bool(pass))
}

// shortest round-trip form, with an exponent for tiny and huge values
fn fmt(v: f64) -> String {
    format!("{v:?}")
}

pub fn mesh(a: &MeshArgs) -> Result<Outcome, CliError> {
    if a.grid.len() != 2 || a.grid.contains(&0) {
        return Err(CliError::Usage("--grid takes two positive interval counts nt,ns".into()));
    }
    let (nt, ns) = (a.grid[0], a.grid[1]);
    let sink: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(File::create(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?),
        None => Box::new(io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(sink);
    let io_err = |e: csv::Error| CliError::Io(e.to_string());
    if a.surface.builtin.as_deref() == Some("ball") && a.surface.graph.is_none() {
        let n = a.surface.n.unwrap_or(2);
        let [i, j] = a.plane[..] else {
            return Err(CliError::Usage("--plane takes two indices i,j".into()));
        };
        if n == 0 || i == j || i == 0 || j == 0 || i > 2 * n || j > 2 * n {
            return Err(CliError::Usage(format!("--plane needs two distinct indices in 1..={}", 2 * n)));
        }
        let mut header = vec!["mu0".to_string()];
        header.extend((1..=2 * n).map(|k| format!("mubar{k}")));
        header.extend((1..=2 * n + 1).map(|k| format!("x{k}")));
        w.write_record(&header).map_err(io_err)?;
        let mu0s: Vec<f64> = match a.mu0 {
            Some(m) => vec![m],
            None => (0..=nt).map(|k| -2.0 * PI + 4.0 * PI * k as f64 / nt as f64).collect(),
        };
        for mu0 in mu0s {
            for b in 0..=ns {
                let th = 2.0 * PI * b as f64 / ns as f64;
                let mut mubar = vec![0.0; 2 * n];
                mubar[i - 1] = th.cos();
                mubar[j - 1] = th.sin();
                let x = ball_parametrization(mu0, &mubar)?;
                let mut row = vec![fmt(mu0)];
                row.extend(mubar.iter().map(|&v| fmt(v)));
                row.extend(x.coords().iter().map(|&v| fmt(v)));
                w.write_record(&row).map_err(io_err)?;
            }
        }
    } else {
        let s = resolve(&a.surface)?;
        if s.domain.len() != 2 {
            return Err(CliError::Usage(format!("mesh needs a two-parameter surface; {} has {} parameters", s.name, s.domain.len())));
        }
        let mut header = vec!["t".to_string(), "s".to_string()];
        header.extend((1..=s.im.group_dim()).map(|k| format!("x{k}")));
        let nodes = uniform_nodes(&s.domain, &[nt, ns]);
        if s.from_curve {
            // generated meshes keep away from degenerate and near-horizontal points
            for u in &nodes {
                let margin = adapted_frame(&s.alg, &*s.im, u, &s.opts).map(|fr| {
                    let sv = fr.tangent.clone().singular_values();
                    fr.transversality.min(sv.min() / sv.max())
                });
                match margin {
                    Ok(m) if m >= a.margin => {}
                    Ok(m) => {
                        eprintln!("node (t, s) = ({}, {}) is within the transversality margin: {m:e} < {:e}", u[0], u[1], a.margin);
                        return Ok(Outcome::Fail);
                    }
                    Err(e) => {
                        eprintln!("node (t, s) = ({}, {}) is degenerate: {e}", u[0], u[1]);
                        return Ok(Outcome::Fail);
                    }
                }
            }
        }
        w.write_record(&header).map_err(io_err)?;
        for u in &nodes {
            let x = s.im.point(u);
            let mut row = vec![fmt(u[0]), fmt(u[1])];
            row.extend(x.iter().map(|&v| fmt(v)));
            w.write_record(&row).map_err(io_err)?;
        }
    }
    w.flush().map_err(|e| CliError::Io(e.to_string()))?;
    Ok(Outcome::Pass)
}

/// Orthonormal `k × k` matrix from the QR factorization of a seeded random
/// matrix.
fn random_rotation(k: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = DMatrix::from_fn(k, k, |_, _| (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0);
    m.qr().q()
}

pub fn metric_factor(a: &MetricFactorArgs) -> Result<Outcome, CliError> {
    if a.n == 0 || a.p > 2 * a.n {
        return Err(CliError::Usage(format!("need n >= 1 and p <= 2n, got n = {}, p = {}", a.n, a.p)));
    }
    if a.samples == 0 {
        return Err(CliError::Usage("--samples must be positive".into()));
    }
    let dim = 2 * a.n + 1;
    let rot = match a.rotation_seed {
        Some(seed) => random_rotation(2 * a.n, seed),
        None => DMatrix::identity(2 * a.n, 2 * a.n),
    };
    let mut subspace: Vec<DVector<f64>> = (0..2 * a.n - a.p)
        .map(|j| {
            let mut v = DVector::zeros(dim);
            v.rows_mut(0, 2 * a.n).copy_from(&rot.column(j));
            v
        })
        .collect();
    subspace.push(DVector::from_fn(dim, |i, _| if i == dim - 1 { 1.0 } else { 0.0 }));
    let sampler = MetricFactorSampler::new(&subspace)?;
    let parts = MetricFactorSampler::partitions(a.samples);
    let threads = a
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .clamp(1, parts.len().max(1));
    // integer hit counts, so the sum is independent of the split
    let hits: u64 = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                let (sampler, parts) = (&sampler, &parts);
                scope.spawn(move || {
                    parts.iter().skip(t).step_by(threads).map(|&(k, c)| sampler.partition_hits(a.seed, k, c)).sum::<u64>()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("sampling worker")).sum()
    });
    let est = MetricFactorEstimate::from_hits(sampler.box_volume(), hits, a.samples);
    let reference = (a.p == 2 * a.n).then(|| 1.0 / (2.0 * PI));
    let report = json!({
        "mean": est.mean,
        "std_error": est.std_error,
        "hits": est.hits,
        "samples": est.samples,
        "box_volume": est.box_volume,
        "reference": reference,
        "metric": "unit vertical vector",
        "params": {
            "n": a.n, "p": a.p, "samples": a.samples, "seed": a.seed,
            "rotation_seed": a.rotation_seed, "subspace_dim": subspace.len(),
        },
    });
    emit(&report, a.json.as_deref())?;
    Ok(Outcome::Pass)
}
