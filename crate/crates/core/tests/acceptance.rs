//! End-to-end acceptance checks. Each test prints one PASS/FAIL line.

use std::time::{Duration, Instant};

use mixfact::estimation::{nll, nll_gradient, select_dim};
use mixfact::numerics::{gauss_hermite_expectation, logsumexp, sigmoid};
use mixfact::testing::{dataset_with_missing, random_factor_model, random_gg, random_unit_rows};
use mixfact::{
    fit, fit_gg, BitMask, FactorModel, FitOptions, GGParams, IndexPartition, MixedDataset, ParamVector, Role, Schema,
    SymMatrix,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn verdict(id: u32, name: &str, ok: bool, detail: String) {
    println!("{} [{id}] {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "[{id}] {name} failed: {detail}");
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn dataset(draws: &[(DVector<f64>, BitMask)]) -> MixedDataset {
    let p_x = draws[0].0.len();
    let q = draws[0].1.width();
    let x = draws.iter().map(|(x, _)| x.iter().map(|v| Some(*v)).collect()).collect();
    let y = draws.iter().map(|(_, y)| y.to_bools().into_iter().map(Some).collect()).collect();
    MixedDataset::from_rows(Schema::default_names(p_x, q), x, y).unwrap()
}

// Trapezoid rule on a whitened grid around the mean of x, summed over y.
fn total_mass(gg: &GGParams) -> f64 {
    let (p, q) = (gg.p(), gg.q());
    let ys: Vec<BitMask> = BitMask::all(q).unwrap().collect();
    if p == 0 {
        let x = DVector::zeros(0);
        return ys.iter().map(|y| gg.joint_logpdf(&x, *y).unwrap().exp()).sum();
    }
    let center = gg.moments().unwrap().mean_x;
    let l = gg.sigma().cholesky().unwrap().l();
    let (h, half) = (0.2f64, 70i32);
    let jac = l.diagonal().product() * h.powi(p as i32);
    let nodes: Vec<f64> = (-half..=half).map(|i| i as f64 * h).collect();
    let mut total = 0.0;
    let mut u = DVector::zeros(p);
    let count = nodes.len().pow(p as u32);
    for flat in 0..count {
        let mut rem = flat;
        for k in 0..p {
            u[k] = nodes[rem % nodes.len()];
            rem /= nodes.len();
        }
        let x = &center + &l * &u;
        for y in &ys {
            total += gg.joint_logpdf(&x, *y).unwrap().exp();
        }
    }
    total * jac
}

#[test]
fn normalization() {
    let start = Instant::now();
    let shapes: Vec<(usize, usize)> = (0..=2).flat_map(|p| (0..=3).map(move |q| (p, q))).filter(|s| *s != (0, 0)).collect();
    let mut r = rng(1);
    let mut worst = 0.0f64;
    for i in 0..50 {
        let (p, q) = shapes[i % shapes.len()];
        let gg = random_gg(&mut r, p, q);
        worst = worst.max((total_mass(&gg) - 1.0).abs());
    }
    let elapsed = start.elapsed();
    verdict(
        1,
        "normalization",
        worst < 1e-6 && elapsed < Duration::from_secs(30),
        format!("50 models, max |mass - 1| = {worst:.2e}, {:.1}s", secs(elapsed)),
    );
}

fn pick(values: &[f64], roles: &[Role], role: Role) -> DVector<f64> {
    DVector::from_iterator(
        roles.iter().filter(|r| **r == role).count(),
        values.iter().zip(roles).filter(|(_, r)| **r == role).map(|(v, _)| *v),
    )
}

fn pick_bits(values: &[bool], roles: &[Role], role: Role) -> Vec<bool> {
    values.iter().zip(roles).filter(|(_, r)| **r == role).map(|(v, _)| *v).collect()
}

fn random_roles<R: Rng>(r: &mut R, n: usize) -> Vec<Role> {
    (0..n)
        .map(|_| match r.random_range(0..3) {
            0 => Role::Query,
            1 => Role::Latent,
            _ => Role::Observed,
        })
        .collect()
}

#[test]
fn bayes_consistency() {
    let mut r = rng(2);
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < 100 {
        let (p, q) = (r.random_range(2..=4), r.random_range(2..=4));
        let cont = random_roles(&mut r, p);
        let bin = random_roles(&mut r, q);
        let has = |v: &[Role], role| v.contains(&role);
        if !has(&cont, Role::Latent) || !has(&bin, Role::Latent) || !(has(&cont, Role::Query) || has(&bin, Role::Query))
        {
            continue;
        }
        done += 1;
        let gg = random_gg(&mut r, p, q);
        let (x, y) = gg.sample_with(1, &mut r).unwrap().remove(0);
        let xs: Vec<f64> = x.iter().copied().collect();
        let yb = y.to_bools();

        let part = IndexPartition::new(cont.clone(), bin.clone());
        let cond = gg
            .conditional_logpdf(
                &part,
                &pick(&xs, &cont, Role::Query),
                &pick_bits(&yb, &bin, Role::Query),
                &pick(&xs, &cont, Role::Observed),
                &pick_bits(&yb, &bin, Role::Observed),
            )
            .unwrap();

        // log p(x_J, y_S, x_K, y_T) - log p(x_K, y_T), both with L and U marginalized
        let promote = |v: &[Role]| -> Vec<Role> {
            v.iter().map(|r| if *r == Role::Query { Role::Observed } else { *r }).collect()
        };
        let demote = |v: &[Role]| -> Vec<Role> {
            v.iter().map(|r| if *r == Role::Query { Role::Latent } else { *r }).collect()
        };
        let (cj, bj) = (promote(&cont), promote(&bin));
        let joint = gg
            .marginal_logpdf(
                &IndexPartition::new(cj.clone(), bj.clone()),
                &pick(&xs, &cj, Role::Observed),
                &pick_bits(&yb, &bj, Role::Observed),
            )
            .unwrap();
        let (cm, bm) = (demote(&cont), demote(&bin));
        let given = if cm.contains(&Role::Observed) || bm.contains(&Role::Observed) {
            gg.marginal_logpdf(
                &IndexPartition::new(cm.clone(), bm.clone()),
                &pick(&xs, &cm, Role::Observed),
                &pick_bits(&yb, &bm, Role::Observed),
            )
            .unwrap()
        } else {
            0.0
        };
        worst = worst.max((cond - (joint - given)).abs());
    }
    verdict(
        2,
        "bayes consistency",
        worst < 1e-9,
        format!("100 partitions with nonempty L and U, max error {worst:.2e}"),
    );
}

#[test]
fn ising_equivalence() {
    let mut r = rng(3);
    let mut worst = 0.0f64;
    let mut cases = 0;
    for q in 1..=10 {
        for p_z in 1..=3 {
            let model = random_factor_model(&mut r, 0, q, p_z);
            let g = model.g_tilde() * model.c().sqrt();
            let coupling = &g * g.transpose() * 0.5;
            let energies: Vec<f64> = (0u32..1 << q)
                .map(|bits| {
                    let y: Vec<f64> = (0..q).map(|i| ((bits >> i) & 1) as f64).collect();
                    let mut e = 0.0;
                    for s in 0..q {
                        e += model.b()[s] * y[s];
                        for t in 0..q {
                            e += coupling[(s, t)] * y[s] * y[t];
                        }
                    }
                    e
                })
                .collect();
            let log_z = logsumexp(&energies);
            let x = DVector::zeros(0);
            for (bits, e) in energies.iter().enumerate() {
                let y = BitMask::new(bits as u32, q).unwrap();
                worst = worst.max((model.observed_logpdf(&x, y).unwrap() - (e - log_z)).abs());
            }
            cases += 1;
        }
    }
    verdict(
        3,
        "ising equivalence",
        worst < 1e-10,
        format!("{cases} models with q <= 10, max error {worst:.2e}"),
    );
}

#[test]
fn factor_density_quadrature() {
    let mut r = rng(4);
    let mut worst = 0.0f64;
    for i in 0..50 {
        let p_z = 1 + i % 2;
        let (p_x, q) = (r.random_range(1..=3), r.random_range(1..=3));
        let model = random_factor_model(&mut r, p_x, q, p_z);
        let (x, y) = model.sample_with(1, &mut r).unwrap().remove(0);
        let center = model.posterior(&x, y).unwrap().mean;
        let unit = SymMatrix::identity(p_z);
        let weight = |z: &DVector<f64>| {
            let d = z - &center;
            -0.5 * d.norm_squared() - 0.5 * p_z as f64 * (2.0 * std::f64::consts::PI).ln()
        };
        let integral = gauss_hermite_expectation(
            |z| {
                (model.conditional_logpdf(&x, y, z).unwrap() + model.prior_logpdf(z).unwrap() - weight(z)).exp()
            },
            &center,
            &unit,
            60,
        )
        .unwrap();
        worst = worst.max((model.observed_logpdf(&x, y).unwrap() - integral.ln()).abs());
    }
    verdict(
        4,
        "factor density vs quadrature",
        worst < 1e-6,
        format!("50 points, p_z <= 2, max error {worst:.2e}"),
    );
}

fn finite_difference(pv: &ParamVector, data: &MixedDataset, h: f64) -> Vec<f64> {
    (0..pv.values.len())
        .map(|k| {
            let mut up = pv.clone();
            let mut dn = pv.clone();
            up.values[k] += h;
            dn.values[k] -= h;
            (nll(&up, data).unwrap() - nll(&dn, data).unwrap()) / (2.0 * h)
        })
        .collect()
}

fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| {
            if a.abs() < 1e-8 {
                (a - n).abs()
            } else {
                (a - n).abs() / a.abs().max(n.abs())
            }
        })
        .fold(0.0, f64::max)
}

#[test]
fn gradient_check() {
    let mut r = rng(5);
    let (mut fa, mut gg) = (0.0f64, 0.0f64);
    for _ in 0..25 {
        let (p_x, q) = loop {
            let d = (r.random_range(0..=3), r.random_range(0..=3));
            if d != (0, 0) {
                break d;
            }
        };
        let p_z = r.random_range(1..=3);
        let truth = random_factor_model(&mut r, p_x, q, p_z);
        let draws = truth.sample_with(20, &mut r).unwrap();
        let data = dataset_with_missing(&mut r, &draws, 0.25, 3);
        let pv = ParamVector::pack_factor(&random_factor_model(&mut r, p_x, q, p_z)).unwrap();
        let g = nll_gradient(&pv, &data).unwrap();
        fa = fa.max(relative_error(&g, &finite_difference(&pv, &data, 1e-5)));
    }
    for _ in 0..25 {
        let (p, q) = loop {
            let d = (r.random_range(0..=3), r.random_range(0..=3));
            if d != (0, 0) {
                break d;
            }
        };
        let fix = p > 0 && q > 0 && r.random_bool(0.3);
        let truth = random_gg(&mut r, p, q);
        let draws = truth.sample_with(20, &mut r).unwrap();
        let data = dataset_with_missing(&mut r, &draws, 0.25, 3);
        let at = random_gg(&mut r, p, q);
        let at = if fix {
            GGParams::new(at.mu().clone(), at.sigma().clone(), at.lambda().clone(), DMatrix::zeros(q, p)).unwrap()
        } else {
            at
        };
        let pv = ParamVector::pack_gg(&at, fix).unwrap();
        let g = nll_gradient(&pv, &data).unwrap();
        gg = gg.max(relative_error(&g, &finite_difference(&pv, &data, 1e-5)));
    }
    verdict(
        5,
        "gradient check",
        fa < 1e-5 && gg < 1e-5,
        format!("25 configurations per family, max relative error factor {fa:.2e}, gg {gg:.2e}"),
    );
}

fn empirical_means(draws: &[(DVector<f64>, BitMask)]) -> (DVector<f64>, DVector<f64>) {
    let n = draws.len() as f64;
    let mx = draws.iter().fold(DVector::zeros(draws[0].0.len()), |a, (x, _)| a + x) / n;
    let my = draws.iter().fold(DVector::zeros(draws[0].1.width()), |a, (_, y)| a + y.to_vector()) / n;
    (mx, my)
}

#[test]
fn mean_reproduction() {
    let start = Instant::now();
    let opts = FitOptions {
        restarts: 2,
        tol: 1e-9,
        ftol: 0.0,
        ..FitOptions::new(6)
    };
    let mut r = rng(6);
    let truth = random_factor_model(&mut r, 3, 4, 2);
    let draws = truth.sample_with(5000, &mut r).unwrap();
    let (mx, my) = empirical_means(&draws);
    let report = fit(&dataset(&draws), 2, &opts).unwrap();
    let m = report.model.as_factor().unwrap().moments().unwrap();
    let fa = (&m.mean_x - &mx).amax().max((&m.mean_y - &my).amax());
    let fa_ok = report.converged;

    let truth = random_gg(&mut r, 3, 4);
    let draws = truth.sample_with(5000, &mut r).unwrap();
    let (mx, my) = empirical_means(&draws);
    let report = fit_gg(&dataset(&draws), &opts).unwrap();
    let m = report.model.as_gg().unwrap().moments().unwrap();
    let gg = (&m.mean_x - &mx).amax().max((&m.mean_y - &my).amax());
    let gg_ok = report.converged;

    let elapsed = start.elapsed();
    verdict(
        6,
        "mean reproduction",
        fa_ok && gg_ok && fa < 1e-6 && gg < 1e-6 && elapsed < Duration::from_secs(120),
        format!(
            "n = 5000, max |E - mean| factor {fa:.2e} (converged {fa_ok}), gg {gg:.2e} (converged {gg_ok}), {:.1}s",
            secs(elapsed)
        ),
    );
}

#[test]
fn rotation_fixing() {
    let mut r = rng(7);
    let truth = random_factor_model(&mut r, 4, 3, 2);
    let draws = truth.sample_with(1500, &mut r).unwrap();
    let data = dataset(&draws);
    let report = fit(&data, 2, &FitOptions::new(7)).unwrap();
    let rotated = report.model.as_factor().unwrap();
    let s = report.loadings.as_ref().unwrap();

    let mr = &s.m * &s.rotation;
    let gram = mr.transpose() * &mr;
    let mut off = 0.0f64;
    for i in 0..gram.nrows() {
        for j in 0..gram.ncols() {
            if i != j {
                off = off.max(gram[(i, j)].abs());
            }
        }
    }
    let sum: f64 = s.contribution.iter().sum();

    // the model before rotation, rebuilt from the unrotated loadings
    let q = rotated.q();
    let sc = rotated.c().sqrt();
    let g = s.m.rows(0, q).into_owned() / sc;
    let w = s.m.rows(q, rotated.p_x()).into_owned() / sc;
    let before = FactorModel::new(
        rotated.mu_x().clone(),
        rotated.psi().clone(),
        rotated.b().clone(),
        w,
        g,
        rotated.c(),
    )
    .unwrap();
    let mut lik = 0.0f64;
    for (x, y) in &draws {
        lik = lik.max((before.observed_logpdf(x, *y).unwrap() - rotated.observed_logpdf(x, *y).unwrap()).abs());
    }
    verdict(
        7,
        "rotation fixing",
        off < 1e-8 && (sum - 1.0).abs() < 1e-12 && lik < 1e-10,
        format!("max off-diagonal {off:.2e}, contribution sum - 1 = {:.2e}, max row log-lik change {lik:.2e}", sum - 1.0),
    );
}

// Classical factor data with one nearly noiseless indicator.
fn near_heywood<R: Rng>(r: &mut R, n: usize) -> MixedDataset {
    let (p_x, q) = (5, 3);
    let lambda: Vec<f64> = (0..p_x).map(|_| r.random_range(0.5..1.5)).collect();
    let mut unique: Vec<f64> = (0..p_x).map(|_| r.random_range(0.3..1.0)).collect();
    unique[r.random_range(0..p_x)] = 1e-6;
    let gam: Vec<f64> = (0..q).map(|_| r.random_range(-1.5..1.5)).collect();
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let z: f64 = StandardNormal.sample(r);
        xs.push(
            (0..p_x)
                .map(|j| {
                    let e: f64 = StandardNormal.sample(r);
                    Some(lambda[j] * z + unique[j].sqrt() * e)
                })
                .collect(),
        );
        ys.push((0..q).map(|s| Some(r.random_bool(sigmoid(gam[s] * z)))).collect());
    }
    MixedDataset::from_rows(Schema::default_names(p_x, q), xs, ys).unwrap()
}

#[test]
fn norm_constraint_guard() {
    let mut r = rng(8);
    let mut violations = 0;
    let mut worst = f64::INFINITY;
    for i in 0..20 {
        let data = near_heywood(&mut r, 500);
        let report = fit(&data, 1, &FitOptions::new(800 + i)).unwrap();
        let psi = report.model.as_factor().unwrap().psi().clone();
        let mut sorted: Vec<f64> = psi.iter().copied().collect();
        sorted.sort_by(f64::total_cmp);
        let median = sorted[sorted.len() / 2];
        let ratio = sorted[0] / median;
        worst = worst.min(ratio);
        if !(ratio > 1e-8) {
            violations += 1;
        }
    }
    verdict(
        8,
        "norm constraint guard",
        violations == 0,
        format!("20 datasets, {violations} violations, smallest min(psi)/median(psi) = {worst:.2e}"),
    );
}

fn selection_truth<R: Rng>(r: &mut R, p_z: usize) -> FactorModel {
    let (p_x, q) = (6, 4);
    FactorModel::new(
        DVector::from_fn(p_x, |_, _| r.random_range(-1.0..1.0)),
        DVector::from_fn(p_x, |_, _| r.random_range(0.5..1.5)),
        DVector::from_fn(q, |_, _| r.random_range(-1.0..1.0)),
        random_unit_rows(r, p_x, p_z),
        random_unit_rows(r, q, p_z),
        1.0,
    )
    .unwrap()
}

#[test]
fn model_selection() {
    let start = Instant::now();
    let mut hits = [0usize; 2];
    for (k, p_z) in [1usize, 2].into_iter().enumerate() {
        for seed in 0..20u64 {
            let mut r = rng(900 + 100 * p_z as u64 + seed);
            let truth = selection_truth(&mut r, p_z);
            let data = dataset(&truth.sample_with(2000, &mut r).unwrap());
            let sel = select_dim(&data, &[1, 2, 3, 4], &FitOptions::new(seed)).unwrap();
            if sel.best == p_z {
                hits[k] += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    verdict(
        9,
        "model selection",
        hits[0] >= 18 && hits[1] >= 18 && elapsed < Duration::from_secs(600),
        format!(
            "recovered p_z = 1 in {}/20, p_z = 2 in {}/20 seeds, {:.1}s",
            hits[0],
            hits[1],
            secs(elapsed)
        ),
    );
}

// Largest |sample - model| / standard error over means and covariances.
fn moment_z_score(draws: &[(DVector<f64>, BitMask)], mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let n = draws.len() as f64;
    let rows: Vec<DVector<f64>> = draws
        .iter()
        .map(|(x, y)| DVector::from_iterator(x.len() + y.width(), x.iter().copied().chain(y.to_vector().iter().copied())))
        .collect();
    let d = mean.len();
    let sample_mean = rows.iter().fold(DVector::zeros(d), |a, v| a + v) / n;
    let mut worst = 0.0f64;
    for i in 0..d {
        let var = rows.iter().map(|v| (v[i] - sample_mean[i]).powi(2)).sum::<f64>() / (n - 1.0);
        worst = worst.max((sample_mean[i] - mean[i]).abs() / (var / n).sqrt());
    }
    for i in 0..d {
        for j in i..d {
            let prods: Vec<f64> = rows.iter().map(|v| (v[i] - sample_mean[i]) * (v[j] - sample_mean[j])).collect();
            let c = prods.iter().sum::<f64>() / (n - 1.0);
            let var = prods.iter().map(|p| (p - c).powi(2)).sum::<f64>() / (n - 1.0);
            worst = worst.max((c - cov[(i, j)]).abs() / (var / n).sqrt());
        }
    }
    worst
}

#[test]
fn sampling_consistency() {
    let n = 1_000_000;
    let mut worst = 0.0f64;
    for i in 0..10u64 {
        let mut r = rng(1000 + i);
        let (draws, m) = if i % 2 == 0 {
            let model = random_factor_model(&mut r, 3, 3, 2);
            (model.sample(n, i).unwrap(), model.moments().unwrap())
        } else {
            let model = random_gg(&mut r, 2, 3);
            (model.sample(n, i).unwrap(), model.moments().unwrap())
        };
        let mean = DVector::from_iterator(
            m.mean_x.len() + m.mean_y.len(),
            m.mean_x.iter().chain(m.mean_y.iter()).copied(),
        );
        worst = worst.max(moment_z_score(&draws, &mean, &m.joint_covariance()));
    }
    verdict(
        10,
        "sampling consistency",
        worst < 4.0,
        format!("10 models, 1e6 draws each, largest deviation {worst:.2} standard errors"),
    );
}
