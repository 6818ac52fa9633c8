//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so that every criterion is reported even
//! when an earlier one fails. By default the binary exits 0 after printing
//! the verdicts; set `NATPN_ACCEPTANCE_STRICT=1` to turn any FAIL into a
//! non-zero exit. `NATPN_ACCEPTANCE_ONLY=1,5,10` restricts the run.
//!
//! Criteria 6-9 train 5-seed models on Concrete and Bike Sharing and take
//! several minutes on one core.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use natpn::data::OodSpec;
use natpn::experiment::{self, Experiment};
use natpn::expfam::{
    expected_log_likelihood, from_standard, prior_entropy, prior_entropy_approx, prior_entropy_exact, StandardParams,
    APPROX_THRESHOLD,
};
use natpn::flows::{fit_flow, mc_normalization, FlowDensity, FlowInit, FlowSpec};
use natpn::metrics::{auc_pr, auc_roc, brier, regression_calibration, EvalReport};
use natpn::model::{checkpoint, BudgetMode, NatPn, NatPnConfig, Predictor};
use natpn::params::ParamStore;
use natpn::tensor::gradcheck::{self, rel_err};
use natpn::tensor::{Tape, Tensor, Var};
use natpn::training::RunRecord;
use natpn::{Exec, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use statrs::function::gamma::ln_gamma;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn manifests() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../manifests")
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

// ---------------------------------------------------------------- 1

type OpFn = Box<dyn for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>>;

struct OpCase {
    name: &'static str,
    shapes: Vec<(usize, usize)>,
    sample: fn(&mut ChaCha8Rng) -> f64,
    f: OpFn,
}

fn weights(r: usize, c: usize) -> Tensor {
    Tensor::from_fn(r, c, |i, j| (1.3 * i as f64 + 0.7 * j as f64 + 0.1).cos())
}

/// Reduces any output to a scalar through a fixed, non-uniform weighting so
/// every output element contributes a distinct cotangent.
fn contract<'t>(tape: &'t Tape, v: Var<'t>) -> Result<Var<'t>> {
    let [r, c] = v.shape();
    v.mul(tape.constant(weights(r, c)))?.sum()
}

fn op_cases() -> Vec<OpCase> {
    fn wide(r: &mut ChaCha8Rng) -> f64 {
        uniform(r, -2.0, 2.0)
    }
    fn positive(r: &mut ChaCha8Rng) -> f64 {
        uniform(r, 0.1, 3.0)
    }
    fn gamma_arg(r: &mut ChaCha8Rng) -> f64 {
        uniform(r, 0.1, 10.0)
    }
    fn away_from_zero(r: &mut ChaCha8Rng) -> f64 {
        let m = uniform(r, 0.01, 2.0);
        if r.random::<bool>() {
            m
        } else {
            -m
        }
    }
    fn away_from_clamp(r: &mut ChaCha8Rng) -> f64 {
        loop {
            let v = uniform(r, -2.0, 2.0);
            if (v.abs() - 1.0).abs() > 0.01 {
                return v;
            }
        }
    }
    fn divisor(r: &mut ChaCha8Rng) -> f64 {
        let m = uniform(r, 0.5, 2.0);
        if r.random::<bool>() {
            m
        } else {
            -m
        }
    }
    macro_rules! unary {
        ($name:expr, $sample:expr, $method:ident $(, $arg:expr)*) => {
            OpCase {
                name: $name,
                shapes: vec![(3, 4)],
                sample: $sample,
                f: Box::new(|t, v| contract(t, v[0].$method($($arg),*)?)),
            }
        };
    }
    macro_rules! binary {
        ($name:expr, $a:expr, $b:expr, $method:ident) => {
            OpCase {
                name: $name,
                shapes: vec![$a, $b],
                sample: wide,
                f: Box::new(|t, v| contract(t, v[0].$method(v[1])?)),
            }
        };
    }
    vec![
        binary!("add", (3, 4), (3, 4), add),
        binary!("add_row_broadcast", (3, 4), (1, 4), add),
        binary!("sub", (3, 4), (3, 4), sub),
        binary!("sub_col_broadcast", (3, 4), (3, 1), sub),
        binary!("mul", (3, 4), (3, 4), mul),
        binary!("mul_scalar_broadcast", (3, 4), (1, 1), mul),
        OpCase {
            name: "div",
            shapes: vec![(3, 4), (3, 4)],
            sample: divisor,
            f: Box::new(|t, v| contract(t, v[0].div(v[1])?)),
        },
        unary!("neg", wide, neg),
        unary!("exp", wide, exp),
        unary!("ln", positive, ln),
        unary!("square", wide, square),
        unary!("sqrt", positive, sqrt),
        unary!("tanh", wide, tanh),
        unary!("softplus", wide, softplus),
        unary!("leaky_relu", away_from_zero, leaky_relu),
        unary!("lgamma", gamma_arg, lgamma),
        unary!("digamma", gamma_arg, digamma),
        unary!("scale", wide, scale, 1.7),
        unary!("shift", wide, shift, -0.3),
        unary!("clamp", away_from_clamp, clamp, -1.0, 1.0),
        unary!("softmax", wide, softmax),
        unary!("sum_rows", wide, sum_rows),
        unary!("sum_cols", wide, sum_cols),
        OpCase {
            name: "sum",
            shapes: vec![(3, 4)],
            sample: wide,
            f: Box::new(|t, v| v[0].mul(t.constant(weights(3, 4)))?.sum()),
        },
        OpCase {
            name: "mean",
            shapes: vec![(3, 4)],
            sample: wide,
            f: Box::new(|t, v| v[0].mul(t.constant(weights(3, 4)))?.mean()),
        },
        binary!("matmul", (3, 4), (4, 2), matmul),
        OpCase {
            name: "affine",
            shapes: vec![(3, 4), (4, 2), (1, 2)],
            sample: wide,
            f: Box::new(|t, v| contract(t, v[0].affine(v[1], v[2])?)),
        },
        OpCase {
            name: "concat",
            shapes: vec![(3, 2), (3, 3)],
            sample: wide,
            f: Box::new(|t, v| contract(t, Var::concat(&[v[0], v[1]])?)),
        },
        unary!("slice_cols", wide, slice_cols, 1, 3),
        OpCase {
            name: "select",
            shapes: vec![(3, 4), (3, 4)],
            sample: wide,
            f: Box::new(|t, v| contract(t, v[0].select((0..12).map(|i| i % 3 != 1).collect(), v[1])?)),
        },
    ]
}

fn model_loss(m: &NatPn, x: &Tensor, y: &Tensor) -> Result<f64> {
    let tape = Tape::new();
    let p = m.store.bind_frozen(&tape);
    let fwd = m.forward(&p, tape.constant(x.clone()))?;
    m.loss(&fwd, y)?.item()
}

/// Full-model loss gradient against central differences over every scalar
/// parameter.
fn model_gradcheck(m: &mut NatPn, x: &Tensor, y: &Tensor, h: f64) -> Result<f64> {
    let analytic: Vec<Tensor> = {
        let tape = Tape::new();
        let p = m.store.bind_all(&tape);
        let fwd = m.forward(&p, tape.constant(x.clone()))?;
        let g = m.loss(&fwd, y)?.backward()?;
        p.vars().iter().map(|&v| g.get(v)).collect()
    };
    let mut worst = 0.0f64;
    for (k, g) in analytic.iter().enumerate() {
        for i in 0..g.len() {
            let orig = m.store.params()[k].value.data()[i];
            m.store.params_mut()[k].value.data_mut()[i] = orig + h;
            let up = model_loss(m, x, y)?;
            m.store.params_mut()[k].value.data_mut()[i] = orig - h;
            let down = model_loss(m, x, y)?;
            m.store.params_mut()[k].value.data_mut()[i] = orig;
            worst = worst.max(rel_err(g.data()[i], (up - down) / (2.0 * h)));
        }
    }
    Ok(worst)
}

fn criterion_1() -> Result<Verdict> {
    const TOL: f64 = 1e-4;
    const H: f64 = 1e-5;
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut worst_op = (0.0f64, "");
    for case in op_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let inputs: Vec<Tensor> = case
                .shapes
                .iter()
                .map(|&(r, c)| Tensor::from_fn(r, c, |_, _| (case.sample)(&mut rng)))
                .collect();
            let rep = gradcheck::check(&inputs, H, |t, v| (case.f)(t, v))?;
            if rep.max_rel_err > worst_op.0 {
                worst_op = (rep.max_rel_err, case.name);
            }
            if !(rep.max_rel_err < TOL) {
                failures.push(format!("{} ({:.2e})", case.name, rep.max_rel_err));
                break;
            }
        }
    }
    let mut worst_model = 0.0f64;
    for family in [
        natpn::expfam::FamilyKind::Categorical { classes: 2 },
        natpn::expfam::FamilyKind::Normal,
        natpn::expfam::FamilyKind::Poisson,
    ] {
        for flow in ["radial-3", "maf-2"] {
            let mut cfg = NatPnConfig::new(family, 2, 3, flow.parse()?);
            cfg.entropy_weight = 1e-5;
            let mut m = NatPn::new(cfg, 5)?;
            let mut rng = ChaCha8Rng::seed_from_u64(6);
            let x = Tensor::from_fn(8, 2, |_, _| StandardNormal.sample(&mut rng));
            let y = Tensor::from_fn(8, 1, |i, _| match family {
                natpn::expfam::FamilyKind::Categorical { .. } => (i % 2) as f64,
                natpn::expfam::FamilyKind::Normal => 0.5 * i as f64 - 2.0,
                natpn::expfam::FamilyKind::Poisson => (i % 5) as f64,
            });
            let e = model_gradcheck(&mut m, &x, &y, H)?;
            if !(e < TOL) {
                failures.push(format!("model {}/{flow} ({e:.2e})", family.name()));
            }
            worst_model = worst_model.max(e);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    if secs >= 60.0 {
        failures.push(format!("runtime {secs:.1}s"));
    }
    Ok(verdict(
        failures.is_empty(),
        format!(
            "{} ops x 100 points, worst op {} {:.2e}; full model (3 families x 2 flows) {:.2e}; {:.1}s{}",
            op_cases().len(),
            worst_op.1,
            worst_op.0,
            worst_model,
            secs,
            if failures.is_empty() { String::new() } else { format!("; failed: {}", failures.join(", ")) }
        ),
    ))
}

// ---------------------------------------------------------------- 2

#[derive(Default)]
struct Welford {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, v: f64) {
        self.n += 1.0;
        let d = v - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (v - self.mean);
    }
    fn sem(&self) -> f64 {
        (self.m2 / (self.n - 1.0) / self.n).sqrt()
    }
}

/// One Monte-Carlo draw of `(log p(y | θ), −log q(θ))` with `θ ~ q`, written
/// against textbook densities independent of the library.
fn mc_draw(s: &StandardParams, y: f64, rng: &mut ChaCha8Rng) -> (f64, f64) {
    const LN_2PI: f64 = 1.837_877_066_409_345_5;
    match s {
        StandardParams::Dirichlet { alpha } => {
            let g: Vec<f64> = alpha.iter().map(|&a| Gamma::new(a, 1.0).unwrap().sample(rng)).collect();
            let total: f64 = g.iter().sum();
            let a0: f64 = alpha.iter().sum();
            let ln_p: Vec<f64> = g.iter().map(|v| (v / total).ln()).collect();
            let log_q = ln_gamma(a0) - alpha.iter().map(|&a| ln_gamma(a)).sum::<f64>()
                + alpha.iter().zip(&ln_p).map(|(a, l)| (a - 1.0) * l).sum::<f64>();
            (ln_p[y as usize], -log_q)
        }
        &StandardParams::Nig {
            mu0,
            lambda,
            alpha,
            beta,
        } => {
            let var = 1.0 / Gamma::new(alpha, 1.0 / beta).unwrap().sample(rng);
            let e: f64 = StandardNormal.sample(rng);
            let mu = mu0 + (var / lambda).sqrt() * e;
            let log_q = 0.5 * lambda.ln() - 0.5 * (LN_2PI + var.ln()) - lambda * (mu - mu0).powi(2) / (2.0 * var)
                + alpha * beta.ln()
                - ln_gamma(alpha)
                - (alpha + 1.0) * var.ln()
                - beta / var;
            let ll = -0.5 * (LN_2PI + var.ln()) - (y - mu).powi(2) / (2.0 * var);
            (ll, -log_q)
        }
        &StandardParams::Gamma { alpha, beta } => {
            let rate = Gamma::new(alpha, 1.0 / beta).unwrap().sample(rng);
            let log_q = alpha * beta.ln() - ln_gamma(alpha) + (alpha - 1.0) * rate.ln() - beta * rate;
            (y * rate.ln() - rate - ln_gamma(y + 1.0), -log_q)
        }
    }
}

fn random_point(family: usize, rng: &mut ChaCha8Rng) -> (StandardParams, f64) {
    match family {
        0 => {
            let k = rng.random_range(2..=6);
            let alpha: Vec<f64> = (0..k).map(|_| uniform(rng, 0.5, 10.0)).collect();
            (StandardParams::Dirichlet { alpha }, rng.random_range(0..k) as f64)
        }
        1 => {
            let n = uniform(rng, 1.0, 20.0);
            let mu0 = uniform(rng, -2.0, 2.0);
            let v = uniform(rng, 0.2, 5.0);
            (
                StandardParams::Nig {
                    mu0,
                    lambda: n,
                    alpha: n / 2.0,
                    beta: n * v / 2.0,
                },
                mu0 + uniform(rng, -3.0, 3.0),
            )
        }
        _ => (
            StandardParams::Gamma {
                alpha: uniform(rng, 0.5, 30.0),
                beta: uniform(rng, 0.5, 5.0),
            },
            rng.random_range(0..=15) as f64,
        ),
    }
}

fn criterion_2() -> Result<Verdict> {
    const SAMPLES: usize = 100_000;
    let start = Instant::now();
    let names = ["dirichlet", "nig", "gamma"];
    let mut worst = BTreeMap::new();
    let mut failures = Vec::new();
    for (f, name) in names.iter().enumerate() {
        let mut worst_z = 0.0f64;
        for point in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 * f as u64 + point);
            let (s, y) = random_point(f, &mut rng);
            let (cp, kind) = from_standard(&s)?;
            let ell = expected_log_likelihood(y, &cp, kind)?;
            let ent = prior_entropy(&cp, kind)?;
            let (mut w_ll, mut w_ent) = (Welford::default(), Welford::default());
            for _ in 0..SAMPLES {
                let (ll, nlq) = mc_draw(&s, y, &mut rng);
                w_ll.push(ll);
                w_ent.push(nlq);
            }
            for (what, closed, w) in [("ell", ell, &w_ll), ("entropy", ent, &w_ent)] {
                let z = (closed - w.mean).abs() / w.sem();
                worst_z = worst_z.max(z);
                if !(z < 3.0) {
                    failures.push(format!("{name} point {point} {what}: closed {closed:.6} mc {:.6} ({z:.2} se)", w.mean));
                }
            }
        }
        worst.insert(*name, worst_z);
    }
    let secs = start.elapsed().as_secs_f64();
    if secs >= 300.0 {
        failures.push(format!("runtime {secs:.1}s"));
    }
    let worst: Vec<String> = worst.iter().map(|(k, z)| format!("{k} {z:.2}")).collect();
    Ok(verdict(
        failures.is_empty(),
        format!(
            "20 points x 3 families, 1e5 samples; worst |diff|/se: {}; {secs:.1}s{}",
            worst.join(", "),
            if failures.is_empty() { String::new() } else { format!("; failed: {}", failures.join("; ")) }
        ),
    ))
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Result<Verdict> {
    const TOL: f64 = 1e-3;
    let c = APPROX_THRESHOLD;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = [0.0f64; 3];
    for _ in 0..20 {
        let k = rng.random_range(2..=5);
        let u: Vec<f64> = (0..k).map(|_| uniform(&mut rng, 1.0, 2.0)).collect();
        let total: f64 = u.iter().sum();
        let v = uniform(&mut rng, 0.1, 10.0);
        let points = [
            StandardParams::Dirichlet {
                alpha: u.iter().map(|x| c * x / total).collect(),
            },
            StandardParams::Nig {
                mu0: uniform(&mut rng, -2.0, 2.0),
                lambda: 2.0 * c,
                alpha: c,
                beta: c * v,
            },
            StandardParams::Gamma {
                alpha: c,
                beta: uniform(&mut rng, 0.1, 10.0),
            },
        ];
        for (i, s) in points.iter().enumerate() {
            let (cp, kind) = from_standard(s)?;
            let exact = prior_entropy_exact(&cp, kind)?;
            let approx = prior_entropy_approx(&cp, kind)?;
            worst[i] = worst[i].max((approx - exact).abs() / exact.abs());
        }
    }
    Ok(verdict(
        worst.iter().all(|&e| e < TOL),
        format!(
            "concentration 1e4, 20 points each; max rel err dirichlet {:.2e}, nig {:.2e}, gamma {:.2e} (tol {TOL:.0e})",
            worst[0], worst[1], worst[2]
        ),
    ))
}

// ---------------------------------------------------------------- 4

fn mixture_latents(dim: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(2000, dim, |i, d| {
        let centre = if i % 2 == 0 { 1.5 } else { -1.0 + 0.5 * d as f64 };
        let e: f64 = StandardNormal.sample(rng);
        centre + 0.5 * e
    })
}

fn criterion_4() -> Result<Verdict> {
    let mut lines = Vec::new();
    let mut pass = true;
    for dim in 1..=3 {
        // The estimator's variance grows with the dimension.
        let samples = 1_000_000 << (dim - 1);
        for spec in ["radial-8", "maf-4"] {
            let spec: FlowSpec = spec.parse()?;
            let mut rng = ChaCha8Rng::seed_from_u64(40 + dim as u64);
            let mut store = ParamStore::new();
            let flow = FlowDensity::new(&mut store, &mut rng, dim, spec, FlowInit::Random);
            let latents = mixture_latents(dim, &mut rng);
            // Importance proposal: a Gaussian twice as wide as the latents.
            let n = latents.rows() as f64;
            let centre: Vec<f64> = (0..dim).map(|d| (0..latents.rows()).map(|i| latents.get(i, d)).sum::<f64>() / n).collect();
            let spread = (0..dim)
                .map(|d| ((0..latents.rows()).map(|i| (latents.get(i, d) - centre[d]).powi(2)).sum::<f64>() / n).sqrt())
                .fold(1.0, f64::max);
            let before = mc_normalization(&flow, &store, samples, &centre, 2.0 * spread, 1, Exec::Parallel)?;
            let rec = fit_flow(&flow, &mut store, &latents, 60, 1e-2, 128, &mut rng)?;
            let gain = rec.mean_log_lik.last().unwrap() - rec.mean_log_lik[0];
            let after = mc_normalization(&flow, &store, samples, &centre, 2.0 * spread, 2, Exec::Parallel)?;
            let mut worst_se = 0.0f64;
            for (est, se) in [before, after] {
                pass &= (est - 1.0).abs() <= 0.01 && se < 0.005;
                worst_se = worst_se.max(se);
            }
            lines.push(format!(
                "H={dim} {spec}: {:.4}/{:.4} (se <= {worst_se:.4}, fit +{gain:.2} nats)",
                before.0, after.0
            ));
        }
    }
    Ok(verdict(pass, format!("importance-sampled integral before/after training: {}", lines.join(", "))))
}

// ---------------------------------------------------------------- shared training helpers

struct Runs {
    exp: Experiment,
    reports: Vec<EvalReport>,
    records: Vec<RunRecord>,
    checkpoints: Vec<PathBuf>,
    secs: f64,
    _dir: tempfile::TempDir,
}

impl Runs {
    fn mean(&self, f: impl Fn(&EvalReport) -> Option<f64>) -> f64 {
        let v: Vec<f64> = self.reports.iter().filter_map(f).collect();
        v.iter().sum::<f64>() / v.len() as f64
    }

    fn mean_ood(&self, set: &str, f: impl Fn(&natpn::metrics::OodScores) -> f64) -> f64 {
        self.mean(|r| r.ood.get(set).map(&f))
    }

    fn mean_val_loss(&self) -> f64 {
        self.records.iter().map(|r| r.final_val_loss).sum::<f64>() / self.records.len() as f64
    }
}

fn train_and_eval(exp: Experiment) -> Result<Runs> {
    let dir = tempfile::tempdir().map_err(|e| natpn::Error::io(Path::new("tempdir"), e))?;
    let start = Instant::now();
    let trained = experiment::train(&exp, &exp.manifest.seeds, dir.path(), Exec::Parallel)?;
    let checkpoints: Vec<PathBuf> = trained.iter().map(|t| t.checkpoint.clone()).collect();
    let eval = experiment::eval(&exp, &checkpoints, false, dir.path(), Exec::Parallel)?;
    Ok(Runs {
        reports: eval.reports.into_iter().map(|(_, r)| r).collect(),
        records: trained.into_iter().map(|t| t.record).collect(),
        checkpoints,
        secs: start.elapsed().as_secs_f64(),
        exp,
        _dir: dir,
    })
}

fn load(name: &str) -> Result<Experiment> {
    Experiment::load(&manifests().join(name))
}

// ---------------------------------------------------------------- 5

fn toy_far_field(runs: &Runs) -> Result<(f64, f64, f64)> {
    let ds = runs.exp.build_dataset()?;
    let far = ds.test.x.map(|v| v * 1e3);
    let (mut worst_ratio, mut worst_gap) = (0.0f64, 0.0f64);
    for cp in &runs.checkpoints {
        let m = checkpoint::load(cp)?;
        let kind = m.family();
        let prior_h = prior_entropy(m.prior(), kind)?;
        let mut on: Vec<f64> = m.predict_all(&ds.test.x, Exec::Sequential)?.iter().map(|p| p.n_update).collect();
        on.sort_by(f64::total_cmp);
        let median = on[on.len() / 2];
        for p in m.predict_all(&far, Exec::Sequential)? {
            worst_ratio = worst_ratio.max(p.n_update / median);
            worst_gap = worst_gap.max((prior_entropy(&p.posterior(), kind)? - prior_h).abs());
        }
    }
    Ok((worst_ratio, worst_gap, runs.mean_ood("oodom", |s| s.epist_aucpr)))
}

fn criterion_5() -> Result<Verdict> {
    let mut pass = true;
    let mut parts = Vec::new();
    for name in ["two_moons.toml", "sine_regression.toml"] {
        let mut exp = load(name)?;
        if !exp.manifest.ood.iter().any(|o| matches!(o, OodSpec::OodomScale { .. })) {
            exp.manifest.ood.push(OodSpec::OodomScale { factor: 255.0 });
        }
        let runs = train_and_eval(exp)?;
        let (ratio, gap, aucpr) = toy_far_field(&runs)?;
        let ok = ratio < 1e-3 && gap <= 1e-2 && aucpr >= 99.0;
        pass &= ok;
        parts.push(format!(
            "{}: far/median evidence {ratio:.1e}, |H - H_prior| {gap:.1e} nats, OODom epist AUC-PR {aucpr:.2}",
            runs.exp.manifest.name
        ));
    }
    Ok(verdict(pass, format!("5 seeds each; {}", parts.join("; "))))
}

// ---------------------------------------------------------------- 6

fn criterion_6() -> Result<Verdict> {
    let runs = train_and_eval(load("concrete.toml")?)?;
    let rmse = runs.mean(|r| r.rmse);
    let cal = runs.mean(|r| r.calibration);
    let ok_rmse = rmse <= 7.0;
    let ok_cal = cal <= 8.0;
    let ok_time = runs.secs < 600.0;
    Ok(verdict(
        ok_rmse && ok_cal && ok_time,
        format!(
            "5 seeds: RMSE {rmse:.2} (<= 7.0 {}), calibration {cal:.2} (<= 8.0 {}), {:.0}s (< 600 {})",
            mark(ok_rmse),
            mark(ok_cal),
            runs.secs,
            mark(ok_time)
        ),
    ))
}

fn mark(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "MISSED"
    }
}

// ---------------------------------------------------------------- 7-9

struct Bike {
    normal: Option<Runs>,
}

impl Bike {
    fn normal(&mut self) -> Result<&Runs> {
        if self.normal.is_none() {
            self.normal = Some(train_and_eval(load("bike_normal.toml")?)?);
        }
        Ok(self.normal.as_ref().unwrap())
    }
}

const SEASONS: [&str; 3] = ["winter", "spring", "autumn"];

fn criterion_7(bike: &mut Bike) -> Result<Verdict> {
    let runs = bike.normal()?;
    let rmse = runs.mean(|r| r.rmse);
    let cal = runs.mean(|r| r.calibration);
    let oodom = runs.mean_ood("oodom", |s| s.epist_aucpr);
    let ok_rmse = rmse <= 60.0;
    let ok_cal = cal <= 6.0;
    let ok_oodom = oodom >= 99.5;
    let ok_time = runs.secs < 1800.0;
    let mut ok_seasons = true;
    let mut seasons = Vec::new();
    for s in SEASONS {
        // A random score's AUC-PR with ID as the positive class is the ID share.
        let baseline = runs.mean(|r| r.ood.get(s).map(|o| 100.0 * r.n_test as f64 / (r.n_test + o.n) as f64));
        let v = runs.mean_ood(s, |o| o.epist_aucpr);
        ok_seasons &= v > baseline;
        seasons.push(format!("{s} {v:.2}/{baseline:.2}"));
    }
    Ok(verdict(
        ok_rmse && ok_cal && ok_oodom && ok_seasons && ok_time,
        format!(
            "5 seeds: RMSE {rmse:.2} (<= 60 {}), calibration {cal:.2} (<= 6 {}), OODom epist AUC-PR {oodom:.2} (>= 99.5 {}), \
             seasonal epist AUC-PR vs baseline: {} ({}), {:.0}s (< 1800 {})",
            mark(ok_rmse),
            mark(ok_cal),
            mark(ok_oodom),
            seasons.join(", "),
            mark(ok_seasons),
            runs.secs,
            mark(ok_time)
        ),
    ))
}

fn criterion_8(bike: &mut Bike) -> Result<Verdict> {
    let poisson = train_and_eval(load("bike_poisson.toml")?)?;
    let normal = bike.normal()?;
    let rmse = poisson.mean(|r| r.rmse);
    let oodom = poisson.mean_ood("oodom", |s| s.epist_aucpr);
    let cal_p = poisson.mean(|r| r.calibration);
    let cal_n = normal.mean(|r| r.calibration);
    let ok_rmse = rmse <= 65.0;
    let ok_oodom = oodom >= 99.5;
    let ok_order = cal_p > cal_n;
    Ok(verdict(
        ok_rmse && ok_oodom && ok_order,
        format!(
            "5 seeds: RMSE {rmse:.2} (<= 65 {}), OODom epist AUC-PR {oodom:.2} (>= 99.5 {}), \
             calibration Poisson {cal_p:.2} vs Normal {cal_n:.2} (worse {}), {:.0}s",
            mark(ok_rmse),
            mark(ok_oodom),
            mark(ok_order),
            poisson.secs
        ),
    ))
}

fn criterion_9(bike: &mut Bike) -> Result<Verdict> {
    let base = bike.normal()?;
    let mut rmse = BTreeMap::new();
    rmse.insert(base.exp.manifest.model.budget.name(), base.mean(|r| r.rmse));
    let val16 = base.mean_val_loss();
    let h16 = base.exp.manifest.model.latent_dim;
    let template = base.exp.clone();
    for budget in [BudgetMode::Unit, BudgetMode::DataCount, BudgetMode::Dimension] {
        if rmse.contains_key(budget.name()) {
            continue;
        }
        let mut exp = template.clone();
        exp.manifest.model.budget = budget;
        exp.manifest.ood.clear();
        rmse.insert(budget.name(), train_and_eval(exp)?.mean(|r| r.rmse));
    }
    let mut exp = template.clone();
    exp.manifest.model.latent_dim = 4;
    exp.manifest.ood.clear();
    let val4 = train_and_eval(exp)?.mean_val_loss();
    let worst_other = rmse["unit"].max(rmse["data_count"]);
    let ok_budget = rmse["dimension"] <= worst_other;
    let ok_h = val16 < val4;
    let listed: Vec<String> = rmse.iter().map(|(k, v)| format!("{k} {v:.2}")).collect();
    Ok(verdict(
        ok_budget && ok_h && h16 == 16,
        format!(
            "Bike Normal, 5 seeds: test RMSE by budget {} (dimension <= worst of unit/data_count {}); \
             val loss H=16 {val16:.4} vs H=4 {val4:.4} (H=16 better {})",
            listed.join(", "),
            mark(ok_budget),
            mark(ok_h)
        ),
    ))
}

// ---------------------------------------------------------------- 10

fn exhaustive_roc(id: &[f64], ood: &[f64]) -> f64 {
    let mut thresholds: Vec<f64> = id.iter().chain(ood).cloned().collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let (mut px, mut py, mut area) = (0.0, 0.0, 0.0);
    for t in thresholds {
        let tpr = id.iter().filter(|&&s| s >= t).count() as f64 / id.len() as f64;
        let fpr = ood.iter().filter(|&&s| s >= t).count() as f64 / ood.len() as f64;
        area += (fpr - px) * (tpr + py) / 2.0;
        px = fpr;
        py = tpr;
    }
    100.0 * area
}

fn exhaustive_pr(id: &[f64], ood: &[f64]) -> f64 {
    let mut thresholds: Vec<f64> = id.iter().chain(ood).cloned().collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let (mut prev, mut area) = (0.0, 0.0);
    for t in thresholds {
        let tp = id.iter().filter(|&&s| s >= t).count() as f64;
        let fp = ood.iter().filter(|&&s| s >= t).count() as f64;
        let recall = tp / id.len() as f64;
        area += (recall - prev) * tp / (tp + fp);
        prev = recall;
    }
    100.0 * area
}

fn criterion_10() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut auc_err = 0.0f64;
    for _ in 0..10_000 {
        let m = rng.random_range(2..=8);
        let n_id = rng.random_range(1..m);
        let ties = rng.random::<bool>();
        let draw = |r: &mut ChaCha8Rng| if ties { r.random_range(0..4) as f64 } else { r.random::<f64>() };
        let id: Vec<f64> = (0..n_id).map(|_| draw(&mut rng)).collect();
        let ood: Vec<f64> = (0..m - n_id).map(|_| draw(&mut rng)).collect();
        auc_err = auc_err
            .max((auc_roc(&id, &ood)? - exhaustive_roc(&id, &ood)).abs())
            .max((auc_pr(&id, &ood)? - exhaustive_pr(&id, &ood)).abs());
    }
    let mut brier_err = 0.0f64;
    let mut cal_err = 0.0f64;
    for _ in 0..1_000 {
        let n = rng.random_range(1..50);
        let c = rng.random_range(2..6);
        let probs: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let w: Vec<f64> = (0..c).map(|_| rng.random::<f64>() + 1e-3).collect();
                let s: f64 = w.iter().sum();
                w.iter().map(|v| v / s).collect()
            })
            .collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let mut naive = 0.0;
        for i in 0..n {
            let mut sq = 0.0;
            for k in 0..c {
                let t = if labels[i] == k { 1.0 } else { 0.0 };
                sq += (probs[i][k] - t) * (probs[i][k] - t);
            }
            naive += sq.sqrt();
        }
        naive = 100.0 * naive / n as f64 / c as f64;
        brier_err = brier_err.max((brier(&probs, &labels)? - naive).abs());

        let cdfs: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let mut ss = 0.0;
        for level in 1..=9 {
            let p = level as f64 / 10.0;
            let mut hits = 0;
            for &f in &cdfs {
                if f <= p / 2.0 || f >= 1.0 - p / 2.0 {
                    hits += 1;
                }
            }
            ss += (p - hits as f64 / n as f64).powi(2);
        }
        cal_err = cal_err.max((regression_calibration(&cdfs)? - 100.0 * ss.sqrt()).abs());
    }
    Ok(verdict(
        auc_err <= 1e-9 && brier_err <= 1e-12 && cal_err <= 1e-12,
        format!(
            "1e4 AUC instances (<= 8 points, half with ties) max |diff| {auc_err:.1e}; \
             Brier {brier_err:.1e}, calibration {cal_err:.1e} vs naive loops"
        ),
    ))
}

// ---------------------------------------------------------------- 11

fn read_tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().is_some_and(|n| n != "timing.json") {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn criterion_11() -> Result<Verdict> {
    let mut trees = Vec::new();
    let mut files = Vec::new();
    for (name, seeds) in [("two_moons.toml", vec![3u64]), ("concrete.toml", vec![1u64])] {
        let mut exp = load(name)?;
        exp.manifest.seeds = seeds;
        let mut per_name = Vec::new();
        for exec in [Exec::Parallel, Exec::Parallel, Exec::Sequential] {
            let dir = tempfile::tempdir().map_err(|e| natpn::Error::io(Path::new("tempdir"), e))?;
            experiment::train(&exp, &exp.manifest.seeds, dir.path(), exec)?;
            let cps = experiment::default_checkpoints(&exp, dir.path());
            experiment::eval(&exp, &cps, false, dir.path(), exec)?;
            experiment::ood_report(&exp, &cps, dir.path(), exec)?;
            per_name.push(read_tree(dir.path()));
        }
        files.push(per_name[0].len());
        trees.push(per_name);
    }
    let identical = trees.iter().all(|t| t.windows(2).all(|w| w[0] == w[1]));
    Ok(verdict(
        identical,
        format!(
            "two runs plus a sequential run of two_moons and concrete: {} and {} output files (checkpoint, run record, reports) {}",
            files[0],
            files[1],
            if identical { "byte-identical" } else { "DIFFER" }
        ),
    ))
}

// ----------------------------------------------------------------

fn main() {
    let only: Option<Vec<u32>> = std::env::var("NATPN_ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let strict = std::env::var("NATPN_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let mut bike = Bike { normal: None };
    let mut results = Vec::new();
    let criteria: Vec<(u32, &str)> = vec![
        (1, "autodiff soundness"),
        (2, "closed form vs Monte Carlo"),
        (3, "large-concentration entropy approximations"),
        (4, "flow normalization"),
        (5, "evidence vanishes far from data"),
        (6, "Concrete regression"),
        (7, "Bike Sharing, Normal target"),
        (8, "Bike Sharing, Poisson target"),
        (9, "ablation orderings"),
        (10, "metric oracles"),
        (11, "determinism"),
    ];
    for (id, title) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(|| match id {
            1 => criterion_1(),
            2 => criterion_2(),
            3 => criterion_3(),
            4 => criterion_4(),
            5 => criterion_5(),
            6 => criterion_6(),
            7 => criterion_7(&mut bike),
            8 => criterion_8(&mut bike),
            9 => criterion_9(&mut bike),
            10 => criterion_10(),
            _ => criterion_11(),
        }));
        let v = match outcome {
            Ok(Ok(v)) => v,
            Ok(Err(e)) => verdict(false, format!("error: {e}")),
            Err(p) => verdict(
                false,
                format!(
                    "panic: {}",
                    p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default()
                ),
            ),
        };
        let line = format!(
            "criterion {id:>2} {}: {title} [{:.1}s] {}",
            if v.pass { "PASS" } else { "FAIL" },
            Duration::as_secs_f64(&start.elapsed()),
            v.detail
        );
        println!("{line}");
        results.push(v.pass);
    }
    let failed = results.iter().filter(|p| !**p).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if strict && failed > 0 {
        std::process::exit(1);
    }
}
