//! Randomised checks of the losses, their gradients and the mixing
//! invariants, shared by the `selftest` command and the test suites.

use ndarray::{Array2, Array4, ArrayView2};
use rand::{Rng as _, RngCore, SeedableRng};
use rand_distr::{Distribution, Normal};

use crate::augment::{apply_mix_plan, ImageBatch, MixPlan, SoftLabelBatch};
use crate::error::Result;
use crate::losses;
use crate::oracle::{self, Rows};
use crate::rng::{self, Rng};

/// Outcome of one check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

/// A random loss problem: `peers` logit and feature matrices, soft targets,
/// a teacher and a temperature.
#[derive(Debug, Clone)]
pub struct LossInstance {
    pub logits: Vec<Array2<f64>>,
    pub features: Vec<Array2<f64>>,
    pub teacher: Array2<f64>,
    pub targets: SoftLabelBatch,
    pub tau: f64,
}

fn normal_matrix(rng: &mut Rng, rows: usize, cols: usize, std: f64) -> Array2<f64> {
    let dist = Normal::new(0.0, std).expect("finite std");
    Array2::from_shape_fn((rows, cols), |_| dist.sample(rng))
}

/// Draws an instance with `n <= 8`, `K <= 5`, `d <= 7` and 2 to 4 peers.
/// Targets are two-class mixtures, as the mixer produces.
pub fn random_instance(rng: &mut Rng) -> LossInstance {
    let n = rng.random_range(1..=8);
    let k = rng.random_range(2..=5);
    let d = rng.random_range(1..=7);
    let peers = rng.random_range(2..=4);
    let logits = (0..peers).map(|_| normal_matrix(rng, n, k, 1.5)).collect();
    let features = (0..peers).map(|_| normal_matrix(rng, n, d, 1.0)).collect();
    let teacher = normal_matrix(rng, n, k, 1.5);
    let mut probs = Array2::zeros((n, k));
    for i in 0..n {
        let lam: f64 = rng.random();
        probs[[i, rng.random_range(0..k)]] += lam;
        probs[[i, rng.random_range(0..k)]] += 1.0 - lam;
    }
    LossInstance {
        logits,
        features,
        teacher,
        targets: SoftLabelBatch { probs },
        tau: rng.random_range(0.5..5.0),
    }
}

fn rows(a: &Array2<f64>) -> Rows {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Library value and oracle value of every loss on `inst`, as
/// `(name, library, oracle)`.
pub fn loss_pairs(inst: &LossInstance) -> Result<Vec<(&'static str, f64, f64)>> {
    let views: Vec<ArrayView2<f64>> = inst.logits.iter().map(|l| l.view()).collect();
    let fviews: Vec<ArrayView2<f64>> = inst.features.iter().map(|f| f.view()).collect();
    let lrows: Vec<Rows> = inst.logits.iter().map(rows).collect();
    let frows: Vec<Rows> = inst.features.iter().map(rows).collect();
    let t = rows(&inst.teacher);
    let tau = inst.tau;
    let mut out = vec![
        (
            "soft_ce",
            losses::soft_ce(views[0], &inst.targets)?,
            oracle::soft_ce(&lrows[0], &rows(&inst.targets.probs)),
        ),
        ("kd_kl", losses::kd_kl(views[0], views[1], tau)?, oracle::kd_kl(&lrows[0], &lrows[1], tau)),
        ("pt_loss", losses::pt_loss(views[0], inst.teacher.view(), tau)?, oracle::pt(&lrows[0], &t, tau)),
    ];
    for j in 0..views.len() {
        out.push(("dml_loss", losses::dml_loss(&views, j, tau)?, oracle::dml(&lrows, j, tau)));
        out.push(("mmd_loss", losses::mmd_loss(&fviews, j)?, oracle::mmd(&frows, j)));
    }
    Ok(out)
}

/// Compares every loss with its loop oracle on `instances` random problems.
pub fn check_loss_oracles(instances: usize, seed: u64, tol: f64) -> Result<CheckOutcome> {
    let mut rng = Rng::seed_from_u64(seed);
    let mut worst = (0.0, "");
    for _ in 0..instances {
        for (name, lib, ora) in loss_pairs(&random_instance(&mut rng))? {
            let e = rel_err(lib, ora);
            if !(e <= worst.0) {
                worst = (e, name);
            }
        }
    }
    Ok(CheckOutcome::new(
        "loss oracles",
        worst.0 <= tol,
        format!("{instances} instances, worst relative error {:.3e} ({})", worst.0, worst.1),
    ))
}

fn grad_error(analytic: &Array2<f64>, numeric: &Rows) -> f64 {
    let mut diff: f64 = 0.0;
    let mut scale: f64 = 1e-8;
    for (i, row) in numeric.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            diff = diff.max((analytic[[i, c]] - v).abs());
            scale = scale.max(v.abs()).max(analytic[[i, c]].abs());
        }
    }
    diff / scale
}

fn to_array(r: &Rows) -> Array2<f64> {
    Array2::from_shape_fn((r.len(), r[0].len()), |(i, c)| r[i][c])
}

/// Max-norm relative error of each analytic gradient against central
/// differences with step `step`, as `(name, error)`.
pub fn gradient_errors(inst: &LossInstance, step: f64) -> Result<Vec<(&'static str, f64)>> {
    let tau = inst.tau;
    let lrows: Vec<Rows> = inst.logits.iter().map(rows).collect();
    let frows: Vec<Rows> = inst.features.iter().map(rows).collect();
    let with_peer0 = |all: &[Array2<f64>], z0: &Rows| -> Vec<Array2<f64>> {
        let mut v = all.to_vec();
        v[0] = to_array(z0);
        v
    };
    let views = |all: &[Array2<f64>]| -> Vec<Array2<f64>> { all.to_vec() };
    let mut out = Vec::new();

    let (_, g) = losses::soft_ce_with_grad(inst.logits[0].view(), &inst.targets)?;
    let fd = oracle::finite_difference(&lrows[0], step, |z| {
        losses::soft_ce(to_array(z).view(), &inst.targets).expect("valid instance")
    });
    out.push(("soft_ce", grad_error(&g, &fd)));

    let (_, g) = losses::kd_kl_with_grad(inst.logits[0].view(), inst.logits[1].view(), tau)?;
    let fd = oracle::finite_difference(&lrows[0], step, |z| {
        losses::kd_kl(to_array(z).view(), inst.logits[1].view(), tau).expect("valid instance")
    });
    out.push(("kd_kl", grad_error(&g, &fd)));

    let (_, g) = losses::pt_loss_with_grad(inst.logits[0].view(), inst.teacher.view(), tau)?;
    let fd = oracle::finite_difference(&lrows[0], step, |z| {
        losses::pt_loss(to_array(z).view(), inst.teacher.view(), tau).expect("valid instance")
    });
    out.push(("pt_loss", grad_error(&g, &fd)));

    let all = views(&inst.logits);
    let vs: Vec<ArrayView2<f64>> = all.iter().map(|a| a.view()).collect();
    let (_, g) = losses::dml_loss_with_grad(&vs, 0, tau)?;
    let fd = oracle::finite_difference(&lrows[0], step, |z| {
        let probe = with_peer0(&inst.logits, z);
        let pv: Vec<ArrayView2<f64>> = probe.iter().map(|a| a.view()).collect();
        losses::dml_loss(&pv, 0, tau).expect("valid instance")
    });
    out.push(("dml_loss", grad_error(&g, &fd)));

    let fv: Vec<ArrayView2<f64>> = inst.features.iter().map(|a| a.view()).collect();
    let (_, g) = losses::mmd_loss_with_grad(&fv, 0)?;
    let fd = oracle::finite_difference(&frows[0], step, |f| {
        let probe = with_peer0(&inst.features, f);
        let pv: Vec<ArrayView2<f64>> = probe.iter().map(|a| a.view()).collect();
        losses::mmd_loss(&pv, 0).expect("valid instance")
    });
    out.push(("mmd_loss", grad_error(&g, &fd)));
    Ok(out)
}

/// Finite-difference check of all five gradients on `instances` problems.
pub fn check_gradients(instances: usize, seed: u64, tol: f64) -> Result<CheckOutcome> {
    let mut rng = Rng::seed_from_u64(seed);
    let mut worst = (0.0, "");
    for _ in 0..instances {
        for (name, e) in gradient_errors(&random_instance(&mut rng), 1e-5)? {
            if !(e <= worst.0) {
                worst = (e, name);
            }
        }
    }
    Ok(CheckOutcome::new(
        "loss gradients",
        worst.0 <= tol,
        format!("{instances} instances, worst relative error {:.3e} ({})", worst.0, worst.1),
    ))
}

/// Image `i` of peer `j` gets pixel values unique to `(j, i, c, y, x)`, so the
/// source of every mixed pixel can be read back.
pub fn tagged_views(n: usize, peers: usize, side: usize, classes: usize, rng: &mut Rng) -> Result<Vec<ImageBatch>> {
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
    (0..peers)
        .map(|j| {
            let px = Array4::from_shape_fn((n, 3, side, side), |(i, c, y, x)| {
                (((j * 64 + i) * 3 + c) * side * side + y * side + x) as f32
            });
            ImageBatch::new(px, labels.clone(), classes)
        })
        .collect()
}

/// Violations found in one plan, empty when it is sound.
pub fn mixing_violations(plan: &MixPlan, views: &[ImageBatch], side: usize) -> Result<Vec<String>> {
    let mut bad = Vec::new();
    let mixed = apply_mix_plan(views, plan)?;
    let lam = plan.lam();
    let total = (side * side) as f64;
    for (j, (m, v)) in mixed.iter().zip(views).enumerate() {
        if m.soft_labels != mixed[0].soft_labels {
            bad.push(format!("peer {j} soft labels differ from peer 0"));
        }
        for (i, mask) in plan.masks()[j].iter().enumerate() {
            if (mask.area() as f64 / total - lam).abs() > 0.07 {
                bad.push(format!("peer {j} sample {i}: area {} vs lambda {lam:.4}", mask.area()));
            }
            let src = plan.perm()[i];
            for c in 0..3 {
                for y in 0..side {
                    for x in 0..side {
                        let from = if mask.contains(x, y) { src } else { i };
                        if m.pixels[[i, c, y, x]] != v.pixels()[[from, c, y, x]] {
                            bad.push(format!("peer {j} sample {i} pixel ({c},{y},{x}) has the wrong source"));
                        }
                    }
                }
            }
        }
        for (i, row) in m.soft_labels.probs.rows().into_iter().enumerate() {
            let support = row.iter().filter(|&&p| p != 0.0).count();
            if (row.sum() - 1.0).abs() > 1e-12 || row.iter().any(|&p| p < 0.0) || support > 2 {
                bad.push(format!("peer {j} label row {i} is not a two-point simplex vector"));
            }
        }
    }
    Ok(bad)
}

/// Samples `plans` random plans at `side x side` and checks provenance, area,
/// label simplex, cross-peer label identity and seed determinism.
pub fn check_mixing(plans: usize, seed: u64, side: usize) -> Result<CheckOutcome> {
    let mut rng = Rng::seed_from_u64(seed);
    let mut failures = Vec::new();
    for p in 0..plans {
        let n = rng.random_range(2..=6);
        let peers = rng.random_range(2..=4);
        let plan_seed = rng.next_u64();
        let sample = || {
            let mut shared = rng::stream(plan_seed, 0, rng::Stream::MixPlan);
            let mut per: Vec<Rng> = (0..peers).map(|j| rng::stream(plan_seed, 0, rng::Stream::Peer(j))).collect();
            MixPlan::sample(n, side, side, &mut shared, &mut per)
        };
        let plan = sample()?;
        if sample()? != plan {
            failures.push(format!("plan {p}: not reproducible from its seed"));
        }
        let views = tagged_views(n, peers, side, 10, &mut rng)?;
        failures.extend(mixing_violations(&plan, &views, side)?.into_iter().map(|v| format!("plan {p}: {v}")));
    }
    let detail = match failures.first() {
        None => format!("{plans} plans at {side}x{side}"),
        Some(f) => format!("{} violations, first: {f}", failures.len()),
    };
    Ok(CheckOutcome::new("mixing invariants", failures.is_empty(), detail))
}

/// The checks run by `cutnmix selftest`.
pub fn run_selftest() -> Result<Vec<CheckOutcome>> {
    Ok(vec![
        check_loss_oracles(200, 1, 1e-10)?,
        check_gradients(50, 2, 1e-4)?,
        check_mixing(200, 3, 32)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selftest_passes() {
        for outcome in run_selftest().unwrap() {
            assert!(outcome.passed, "{outcome:?}");
        }
    }

    #[test]
    fn mixing_check_catches_a_bad_plan() {
        let mut rng = Rng::seed_from_u64(0);
        let views = tagged_views(3, 2, 8, 4, &mut rng).unwrap();
        let mut shared = Rng::seed_from_u64(1);
        let mut per = vec![Rng::seed_from_u64(2), Rng::seed_from_u64(3)];
        let mut plan = MixPlan::sample_with_lambda(0.5, 3, 8, 8, &mut shared, &mut per).unwrap();
        plan.masks_mut()[1][0].w = 1;
        plan.masks_mut()[1][0].h = 1;
        assert!(!mixing_violations(&plan, &views, 8).unwrap().is_empty());
    }
}
