//! The full set of theory checks behind `verify-theory`.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::flow::{BlockKind, FlowConfig, FlowModel};
use crate::framelet::{make_bank, BankKind};
use crate::rng::NormalSampler;

use super::audit::lemma_b1_audit;
use super::bounds::{
    frame_split, prop1_empirical, prop1_error, prop2_bound, prop2_bound_w, prop2_construction_empirical, prop3_bound,
    projector_spectrum, random_orthogonal, remark_bound, EtaChoice,
};
use super::gaussian::{binned_conditional, conditional_moments, GaussianModel};
use super::linear::{constructive_optimum, optimize_orthogonal, random_psd, theorem_linear_value};
use super::maps::{fit_flow, reconstruction_error, reset_mixing, FitConfig, FlowMap, LinearCoupling};
use super::polar::polar_example;
use super::report::BoundReport;

/// Sample counts and iteration budgets for [`verify_theory_with`].
#[derive(Clone, Debug, PartialEq)]
pub struct TheoryBudget {
    pub mc_samples: usize,
    pub binned_samples: usize,
    pub fit_steps: usize,
    pub polar_samples: usize,
    pub random_w: usize,
    pub random_cov: usize,
    pub audit_models: usize,
    pub audit_samples: usize,
}

impl TheoryBudget {
    pub fn full() -> Self {
        TheoryBudget {
            mc_samples: 100_000,
            binned_samples: 1_000_000,
            fit_steps: 1500,
            polar_samples: 1_000_000,
            random_w: 200,
            random_cov: 20,
            audit_models: 10,
            audit_samples: 200,
        }
    }

    /// Reduced sizes for smoke tests; tolerances stay the same.
    pub fn quick() -> Self {
        TheoryBudget {
            mc_samples: 20_000,
            binned_samples: 100_000,
            fit_steps: 300,
            polar_samples: 100_000,
            random_w: 20,
            random_cov: 2,
            audit_models: 2,
            audit_samples: 50,
        }
    }
}

/// `[[2, 1], [1, 2]]`.
pub fn two_by_two() -> GaussianModel {
    GaussianModel::new(DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0])).expect("positive definite")
}

pub fn diag(values: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_vec(values.to_vec()))
}

/// One-level, one-block coupling flow on length `n`, perturbed from the
/// identity with `Inv1x1` held at `I`, then fitted to `g`.
pub fn trained_coupling(g: &GaussianModel, bank: BankKind, hidden: usize, steps: usize, seed: u64) -> Result<FlowModel> {
    let cfg = FlowConfig::new(bank, &[g.dim()], 1, 1, BlockKind::Coupling)
        .with_hidden(hidden)
        .with_seed(seed);
    let mut model = FlowModel::new(cfg)?;
    model.randomize_with(seed, 0.5, 0.2);
    reset_mixing(&mut model);
    let fit = FitConfig {
        steps,
        batch: 64,
        lr: 3e-3,
        seed,
        freeze_mixing: true,
    };
    fit_flow(&mut model, g, &fit)?;
    Ok(model)
}

/// One-level, one-block residual flow with Lipschitz budget `lipschitz`, fitted to `g`.
pub fn trained_ires(g: &GaussianModel, lipschitz: f64, hidden: usize, steps: usize, seed: u64) -> Result<FlowModel> {
    let mut cfg = FlowConfig::new(BankKind::Haar, &[g.dim()], 1, 1, BlockKind::IRes)
        .with_hidden(hidden)
        .with_seed(seed);
    cfg.lipschitz = lipschitz;
    cfg.inv_max_iter = 2000;
    let mut model = FlowModel::new(cfg)?;
    model.randomize_with(seed, 0.5, 0.2);
    let fit = FitConfig {
        steps,
        batch: 32,
        lr: 3e-3,
        seed,
        freeze_mixing: false,
    };
    fit_flow(&mut model, g, &fit)?;
    Ok(model)
}

fn conditional_checks(b: &TheoryBudget, seed: u64) -> Result<Vec<BoundReport>> {
    let g = two_by_two();
    let (wl, wh) = frame_split(&make_bank(BankKind::Haar), 2)?;
    let cm = conditional_moments(&g, &wl, &wh)?;
    let binned = binned_conditional(&g, &wl, &wh, b.binned_samples, 500, seed)?;
    Ok(vec![
        BoundReport::equal("conditional variance, haar [[2,1],[1,2]]", cm.cov[(0, 0)], binned.mean_variance, b.binned_samples, 0.02),
        BoundReport::equal("conditional mean slope, haar [[2,1],[1,2]]", cm.mean_map[(0, 0)], binned.slope, b.binned_samples, 0.02),
    ])
}

fn prop1_checks(b: &TheoryBudget, seed: u64) -> Result<Vec<BoundReport>> {
    let haar = make_bank(BankKind::Haar);
    let g = two_by_two();
    let analytic = prop1_error(&g, &haar, 2)?;
    let optimal = prop1_empirical(&g, &haar, 2, EtaChoice::Optimal, b.mc_samples, seed)?;
    let mut out = vec![
        BoundReport::equal("prop1 analytic, haar [[2,1],[1,2]]", 1.0, analytic, 0, 1e-12),
        BoundReport::equal(
            "prop1 optimal coupling, haar [[2,1],[1,2]]",
            analytic,
            optimal.mean,
            optimal.samples,
            3.0 * optimal.std_err / analytic.abs().max(1.0),
        ),
    ];
    let ar = GaussianModel::ar1(4, 0.8)?;
    let e_ar = prop1_error(&ar, &haar, 4)?;
    let zero = prop1_empirical(&ar, &haar, 4, EtaChoice::Zero, b.mc_samples, seed)?;
    out.push(BoundReport::at_least(
        "prop1 eta = 0 above optimum, haar AR(1) n=4",
        e_ar,
        zero.mean,
        zero.samples,
        3.0 * zero.std_err / e_ar.abs().max(1.0),
    ));
    let model = trained_coupling(&g, BankKind::Haar, 64, b.fit_steps, seed)?;
    let trained = reconstruction_error(&FlowMap::new(model)?, &g, 0.0, b.mc_samples, seed)?;
    out.push(BoundReport::equal(
        "prop1 trained coupling, haar [[2,1],[1,2]]",
        analytic,
        trained.mean,
        trained.samples,
        0.05,
    ));
    Ok(out)
}

fn prop2_checks(b: &TheoryBudget, seed: u64) -> Result<Vec<BoundReport>> {
    let instances: Vec<(&str, GaussianModel, BankKind, usize)> = vec![
        ("haar [[2,1],[1,2]]", two_by_two(), BankKind::Haar, 2),
        ("haar AR(1) n=16", GaussianModel::ar1(16, 0.9)?, BankKind::Haar, 16),
        ("linear-bspline AR(1) n=16", GaussianModel::ar1(16, 0.9)?, BankKind::LinearBspline, 16),
        ("haar isotropic n=8", GaussianModel::isotropic(8, 1.0)?, BankKind::Haar, 8),
    ];
    let mut out = Vec::new();
    for (name, g, kind, n) in instances {
        let bank = make_bank(kind);
        let e = prop1_error(&g, &bank, n)?;
        let j = prop2_bound(&g, &bank, n)?;
        out.push(BoundReport::at_most(format!("prop1 <= prop2, {name}"), j, e, 0, 1e-12));
        let (wl, wh) = frame_split(&bank, n)?;
        let mc = prop2_construction_empirical(&g, &wl, &wh, b.mc_samples, seed)?;
        out.push(BoundReport::at_most(
            format!("prop2 construction <= J, {name}"),
            j,
            mc.mean,
            mc.samples,
            3.0 * mc.std_err / j.abs().max(1.0),
        ));
    }
    Ok(out)
}

fn remark_checks(b: &TheoryBudget, seed: u64) -> Result<Vec<BoundReport>> {
    let cov = diag(&[4.0, 3.0, 2.0, 1.0]);
    let g = GaussianModel::new(cov.clone())?;
    let r = remark_bound(&cov, &projector_spectrum(4, 1), 1)?;
    let mut rng = NormalSampler::new(seed, 0);
    let mut min_j = f64::INFINITY;
    for _ in 0..b.random_w {
        let q = random_orthogonal(4, &mut rng);
        let (wl, wh) = (q.rows(0, 1).into_owned(), q.rows(1, 3).into_owned());
        min_j = min_j.min(prop2_bound_w(&g, &wl, &wh)?);
    }
    Ok(vec![
        BoundReport::equal("remark value, diag(4,3,2,1) d=1", 3.0, r.formula, 0, 1e-12),
        BoundReport::at_least("remark random orthonormal W, diag(4,3,2,1) d=1", r.formula, min_j, b.random_w, 1e-9),
        BoundReport::equal("remark constructed W attains value, diag(4,3,2,1) d=1", r.formula, r.constructed, 0, 1e-8),
        BoundReport::equal("remark constructed W orthonormal", 0.0, r.feasibility(), 0, 1e-10),
        BoundReport::at_least("remark random orthonormal W above tail sum", r.infimum, min_j, b.random_w, 1e-9),
    ])
}

fn prop3_checks(b: &TheoryBudget, seed: u64) -> Result<Vec<BoundReport>> {
    let g = two_by_two();
    let bound = prop3_bound(&g, &make_bank(BankKind::Haar), 2, 0.9)?;
    let model = trained_ires(&g, 0.9, 16, b.fit_steps / 3, seed)?;
    let mc = reconstruction_error(&FlowMap::new(model)?, &g, 0.0, b.mc_samples / 10, seed)?;
    Ok(vec![BoundReport::at_most(
        "prop3 bound dominates trained iResBlock, haar [[2,1],[1,2]] L=0.9",
        bound,
        mc.mean,
        mc.samples,
        0.0,
    )])
}

fn theorem_checks(b: &TheoryBudget, seed: u64) -> Result<Vec<BoundReport>> {
    let mut cases: Vec<(String, DMatrix<f64>, usize, f64)> = vec![
        ("diag(4,3,2,1) d=2 sigma=0".into(), diag(&[4.0, 3.0, 2.0, 1.0]), 2, 0.0),
        ("diag(4,3,2,1) d=2 sigma=0.1".into(), diag(&[4.0, 3.0, 2.0, 1.0]), 2, 0.1),
    ];
    let mut rng = NormalSampler::new(seed, 1);
    for k in 0..b.random_cov {
        cases.push((format!("random PSD #{k} n=6 d=3 sigma=0.2"), random_psd(6, &mut rng), 3, 0.2));
    }
    let mut out = Vec::new();
    for (k, (name, cov, d, sigma)) in cases.iter().enumerate() {
        let n = cov.nrows();
        let value = theorem_linear_value(cov, *d, *sigma)?;
        let w = random_orthogonal(n, &mut NormalSampler::new(seed, 100 + k as u64));
        let (_, built) = constructive_optimum(cov, &w, *d, *sigma)?;
        let search = optimize_orthogonal(cov, &w, *d, *sigma, seed.wrapping_add(k as u64))?;
        out.push(BoundReport::equal(format!("theorem construction, {name}"), value, built, 0, 1e-6));
        out.push(BoundReport::equal(format!("theorem Cayley search, {name}"), value, search.best, search.steps, 1e-3));
    }
    Ok(out)
}

fn polar_checks(b: &TheoryBudget, seed: u64) -> Result<Vec<BoundReport>> {
    let p = polar_example(1.0, b.polar_samples, seed)?;
    Ok(vec![
        BoundReport::equal("polar example error, tau=1", 0.4292, p.empirical.mean, p.empirical.samples, 0.002),
        BoundReport::at_most("polar example below linear value, tau=1", p.linear, p.empirical.mean, p.empirical.samples, 0.0),
        BoundReport::equal("polar example E[r], tau=1", 1.2533, p.mean_radius.mean, p.mean_radius.samples, 0.002),
    ])
}

/// Coupling optimum for every bank on `0.9^|i−j|`, `n = 16`.
pub fn ablation_errors() -> Result<[(BankKind, f64); 3]> {
    let g = GaussianModel::ar1(16, 0.9)?;
    let e = |k| prop1_error(&g, &make_bank(k), 16);
    Ok([
        (BankKind::LinearBspline, e(BankKind::LinearBspline)?),
        (BankKind::Haar, e(BankKind::Haar)?),
        (BankKind::PixelUnshuffle, e(BankKind::PixelUnshuffle)?),
    ])
}

fn ablation_checks() -> Result<Vec<BoundReport>> {
    let [(_, bspline), (_, haar), (_, unshuffle)] = ablation_errors()?;
    Ok(vec![
        BoundReport::at_most("ablation linear-bspline <= haar, AR(1) n=16", haar, bspline, 0, 0.0),
        BoundReport::at_most("ablation haar <= pixel-unshuffle, AR(1) n=16", unshuffle, haar, 0, 0.0),
    ])
}

fn audit_checks(b: &TheoryBudget, seed: u64) -> Result<Vec<BoundReport>> {
    let mut out = Vec::new();
    let g2 = two_by_two();
    let (wl, wh) = frame_split(&make_bank(BankKind::Haar), 2)?;
    let optimal = LinearCoupling::optimal(&g2, wl, wh)?;
    let degenerate = lemma_b1_audit(&optimal, &g2, 0.0, b.mc_samples / 10, seed)?;
    out.push(degenerate.report("lemma audit, optimal coupling sigma=0"));
    out.push(BoundReport::equal(
        "lemma audit lhs matches prop1, haar [[2,1],[1,2]]",
        prop1_error(&g2, &make_bank(BankKind::Haar), 2)?,
        degenerate.lhs,
        degenerate.samples,
        0.05,
    ));
    let g = GaussianModel::ar1(4, 0.8)?;
    for k in 0..b.audit_models {
        let model_seed = seed.wrapping_add(1000 + k as u64);
        let model = trained_coupling(&g, BankKind::Haar, 16, b.fit_steps / 5, model_seed)?;
        let r = lemma_b1_audit(&FlowMap::new(model)?, &g, 0.3, b.audit_samples, model_seed)?;
        out.push(r.report(format!("lemma audit, trained coupling #{k} haar n=4")));
    }
    Ok(out)
}

/// Every theory check with [`TheoryBudget::full`].
pub fn verify_theory(seed: u64) -> Result<Vec<BoundReport>> {
    verify_theory_with(&TheoryBudget::full(), seed)
}

pub fn verify_theory_with(b: &TheoryBudget, seed: u64) -> Result<Vec<BoundReport>> {
    let mut out = conditional_checks(b, seed)?;
    out.extend(prop1_checks(b, seed)?);
    out.extend(prop2_checks(b, seed)?);
    out.extend(remark_checks(b, seed)?);
    out.extend(prop3_checks(b, seed)?);
    out.extend(theorem_checks(b, seed)?);
    out.extend(polar_checks(b, seed)?);
    out.extend(ablation_checks()?);
    out.extend(audit_checks(b, seed)?);
    Ok(out)
}
