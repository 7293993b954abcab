//! Central finite-difference verification of analytic parameter gradients.
//!
//! Only forward evaluations are used to form the numerical estimate, so the
//! check is independent of every `backward` implementation it audits.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::layer::{Param, ParamKind, ParamVisitor};
use crate::real::Real;

#[derive(Debug, Clone)]
pub struct GradMismatch {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub params_checked: usize,
    pub entries_checked: usize,
    pub worst_relative: f64,
    pub mismatches: Vec<GradMismatch>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    /// Entries sampled from each parameter tensor (all entries if smaller).
    pub samples_per_param: usize,
    pub step: f64,
    pub rel_tol: f64,
    /// Absolute slack below which disagreement is treated as round-off.
    pub abs_tol: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { samples_per_param: 3, step: 1e-5, rel_tol: 1e-3, abs_tol: 1e-8, seed: 0 }
    }
}

/// Relative disagreement used by the checker.
pub fn relative_error(analytic: f64, numeric: f64, abs_tol: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff <= abs_tol {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs())
}

/// Compares analytic gradients to central differences on sampled entries of
/// every weight tensor.
///
/// `visit` exposes the model's parameters; `eval` runs one forward pass and
/// returns the scalar loss, additionally accumulating parameter gradients when
/// its flag is `true`. Gradients are zeroed before the analytic pass.
pub fn check_gradients<M, F: Real>(
    model: &mut M,
    visit: impl Fn(&mut M, &mut ParamVisitor<'_, F>),
    mut eval: impl FnMut(&mut M, bool) -> f64,
    cfg: GradCheckConfig,
) -> GradCheckReport {
    visit(model, &mut |_, p: &mut Param<F>| p.zero_grad());
    eval(model, true);

    let mut targets: Vec<(String, Vec<usize>, Vec<f64>)> = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    visit(model, &mut |name, p| {
        if p.kind != ParamKind::Weight {
            return;
        }
        let idx: Vec<usize> = if p.len() <= cfg.samples_per_param {
            (0..p.len()).collect()
        } else {
            let mut v = sample(&mut rng, p.len(), cfg.samples_per_param).into_vec();
            v.sort_unstable();
            v
        };
        let grads = idx.iter().map(|&i| p.grad[i].to_f64().unwrap()).collect();
        targets.push((name.to_string(), idx, grads));
    });

    let mut report = GradCheckReport { params_checked: targets.len(), ..Default::default() };
    for (name, idx, grads) in &targets {
        for (&i, &analytic) in idx.iter().zip(grads) {
            let original = read_entry(model, &visit, name, i);
            write_entry(model, &visit, name, i, original + cfg.step);
            let up = eval(model, false);
            write_entry(model, &visit, name, i, original - cfg.step);
            let down = eval(model, false);
            write_entry(model, &visit, name, i, original);
            let numeric = (up - down) / (2.0 * cfg.step);
            let rel = relative_error(analytic, numeric, cfg.abs_tol);
            report.entries_checked += 1;
            report.worst_relative = report.worst_relative.max(rel);
            if rel > cfg.rel_tol {
                report.mismatches.push(GradMismatch { param: name.clone(), index: i, analytic, numeric });
            }
        }
    }
    report
}

fn read_entry<M, F: Real>(model: &mut M, visit: &impl Fn(&mut M, &mut ParamVisitor<'_, F>), name: &str, i: usize) -> f64 {
    let mut out = f64::NAN;
    visit(model, &mut |n, p| {
        if n == name {
            out = p.value[i].to_f64().unwrap();
        }
    });
    out
}

fn write_entry<M, F: Real>(model: &mut M, visit: &impl Fn(&mut M, &mut ParamVisitor<'_, F>), name: &str, i: usize, v: f64) {
    visit(model, &mut |n, p| {
        if n == name {
            p.value[i] = F::lit(v);
        }
    });
}
