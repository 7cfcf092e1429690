//! Acceptance checks. Each test prints one `PASS`/`FAIL` line with the
//! measured quantity and the pinned tolerance, then asserts.

use std::io::Write;
use std::sync::OnceLock;
use std::time::Instant;

use scoreopt_core::benchmark::ToyBenchmark;
use scoreopt_core::finite_diff::{finite_diff_grad, finite_diff_vjp, relative_error};
use scoreopt_core::score::train_dsm_traced;
use scoreopt_core::*;

const PROBES: usize = 100;

/// Written straight to stdout so the line shows even when output is captured.
fn report(id: u32, name: &str, pass: bool, detail: String) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    writeln!(out, "criterion {id:>2} {name}: {verdict} ({detail})").unwrap();
    out.flush().unwrap();
}

fn bench() -> &'static ToyBenchmark {
    static B: OnceLock<ToyBenchmark> = OnceLock::new();
    B.get_or_init(|| ToyBenchmark::build().expect("toy benchmark builds"))
}

fn noise(sigma: f64) -> NoiseLevel {
    NoiseLevel::new(sigma).unwrap()
}

fn probe_model() -> GmmModel {
    let means = vec![
        Tensor::from_vec(vec![0.0, 0.0, 0.0]),
        Tensor::from_vec(vec![1.5, -0.5, 0.3]),
        Tensor::from_vec(vec![-1.0, 1.0, -0.8]),
    ];
    GmmModel::new(vec![0.5, 0.3, 0.2], means, vec![0.3, 0.6, 0.2]).unwrap()
}

/// Posterior mean of a 1-D mixture by trapezoid quadrature.
fn quadrature_posterior_mean(m: &GmmModel, y: f64, sigma: f64) -> f64 {
    let (lo, hi, n) = (-12.0, 12.0, 40_000);
    let h = (hi - lo) / n as f64;
    let (mut num, mut den) = (0.0, 0.0);
    for k in 0..=n {
        let x = lo + h * k as f64;
        let mut prior = 0.0;
        for c in 0..m.components() {
            let (mu, v) = (m.means()[c][0], m.variances()[c]);
            prior += m.weights()[c] * (-(x - mu).powi(2) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt();
        }
        let w = if k == 0 || k == n { 0.5 } else { 1.0 };
        let p = w * prior * (-(y - x).powi(2) / (2.0 * sigma * sigma)).exp();
        num += p * x;
        den += p;
    }
    num / den
}

#[test]
fn c01_oracle_correctness() {
    let start = Instant::now();
    let m = probe_model();
    let m1 = GmmModel::new(
        vec![0.6, 0.4],
        vec![Tensor::from_vec(vec![-1.0]), Tensor::from_vec(vec![2.0])],
        vec![0.5, 0.2],
    )
    .unwrap();
    let mut rng = RngStream::new(11, 0);
    let (mut score_err, mut den_err, mut vjp_err, mut tweedie) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..PROBES {
        let s = noise(rng.uniform(0.1, 1.5));
        let x = &m.sample(&mut rng).0 + &(&rng.gaussian(&[3]) * s.sigma());
        let fd = finite_diff_grad(|p| m.noised_logdensity(p, s), &x, 1e-5).unwrap();
        score_err = score_err.max(relative_error(&m.score(&x, s), &fd, 1e-3));

        let v = rng.gaussian(&[3]);
        let fd = finite_diff_vjp(|p| m.score(p, s), &x, &v, 1e-5).unwrap();
        vjp_err = vjp_err.max(relative_error(&m.score_vjp(&x, s, &v), &fd, 1e-3));

        let expect = &x + &(&m.score(&x, s) * s.variance());
        tweedie = tweedie.max(relative_error(&m.denoise(&x, s), &expect, 1.0));

        let s1 = rng.uniform(0.2, 1.5);
        let y = m1.sample(&mut rng).0[0] + s1 * rng.normal();
        let q = quadrature_posterior_mean(&m1, y, s1);
        let d = m1.denoise(&Tensor::from_vec(vec![y]), noise(s1))[0];
        den_err = den_err.max((d - q).abs() / q.abs().max(1e-3));
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = score_err < 1e-4 && den_err < 1e-4 && vjp_err < 1e-4 && tweedie <= 1e-12 && secs < 10.0;
    report(
        1,
        "oracle correctness",
        pass,
        format!(
            "score {score_err:.2e}, denoiser {den_err:.2e}, vjp {vjp_err:.2e} (tol 1e-4); tweedie {tweedie:.2e} (tol 1e-12); {secs:.2}s (limit 10s)"
        ),
    );
    assert!(pass);
}

#[test]
fn c02_gradient_equivalence() {
    let m = probe_model();
    let mut rng = RngStream::new(12, 0);
    let kinds = [
        LossKind::Diff,
        LossKind::Mse { lambda: 0.7 },
        LossKind::Sr { lambda_reg: 1.3 },
    ];
    let mut worst = 0.0f64;
    for _ in 0..PROBES {
        let sigma = noise(rng.uniform(0.05, 1.0));
        let x = rng.gaussian(&[3]);
        let x_a = &x + &(&rng.gaussian(&[3]) * 0.3);
        let s = LossSample::draw(sigma, 3, &mut rng);
        let mut x_t = x.clone();
        x_t.axpy(sigma.sigma(), &s.eps1);
        for kind in kinds {
            let a = loss_grad(kind, &m, &x, &x_a, &s);
            let b = loss_grad_at_noisy(kind, &m, &x_t, &s.eps1, &x_a, &s);
            worst = worst.max(relative_error(&a, &b, 1.0));
        }
    }
    let pass = worst <= 1e-14;
    report(
        2,
        "gradient w.r.t. x equals gradient w.r.t. x_t",
        pass,
        format!("max |Δ|∞ / max(1, |g|∞) = {worst:.2e} (tol 1e-14)"),
    );
    assert!(pass);
}

#[test]
fn c03_loss_identities() {
    let m = probe_model();
    let mut rng = RngStream::new(13, 0);
    let (mut mse0, mut sr_same, mut expansion) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..PROBES {
        let sigma = noise(rng.uniform(0.05, 1.0));
        let x = rng.gaussian(&[3]);
        let x_a = &x + &(&rng.gaussian(&[3]) * 0.3);
        let s = LossSample::draw(sigma, 3, &mut rng);
        let diff = diff_loss(&m, &x, &s);
        mse0 = mse0.max((mse_loss(&m, &x, &x_a, 0.0, &s) - diff).abs() / diff.max(1.0));
        let same = LossSample::new(sigma, s.eps1.clone(), s.eps1.clone()).unwrap();
        sr_same = sr_same.max((sr_loss(&m, &x, &x, 2.0, &same) - diff_loss(&m, &x, &same)).abs() / diff.max(1.0));

        // ‖D(x_t) − D(x_a,t)‖² against ‖x_t − x_a,t + σ²(s(x_t) − s(x_a,t))‖²
        let x_t = &x + &(&s.eps1 * sigma.sigma());
        let xa_t = &x_a + &(&s.eps2 * sigma.sigma());
        let reg = (&m.denoise(&x_t, sigma) - &m.denoise(&xa_t, sigma)).norm_sq();
        let mut expanded = &x_t - &xa_t;
        expanded.axpy(sigma.variance(), &(&m.score(&x_t, sigma) - &m.score(&xa_t, sigma)));
        let sr_reg = sr_loss(&m, &x, &x_a, 1.0, &s) - diff;
        expansion = expansion.max((expanded.norm_sq() - reg).abs() / reg.max(1.0));
        expansion = expansion.max((sr_reg - reg).abs() / reg.max(1.0));
    }
    let unit = GmmModel::isotropic(vec![Tensor::zeros(&[2])], 1.0).unwrap();
    let zero = Tensor::zeros(&[2]);
    let diff_fixture = diff_loss(
        &unit,
        &zero,
        &LossSample::new(noise(1.0), Tensor::from_vec(vec![1.0, 0.0]), zero.clone()).unwrap(),
    );
    let sr_fixture = sr_loss(
        &unit,
        &zero,
        &Tensor::from_vec(vec![1.0, 0.0]),
        1.0,
        &LossSample::new(noise(1.0), zero.clone(), zero.clone()).unwrap(),
    );
    let pass = mse0 <= 1e-12
        && sr_same <= 1e-12
        && expansion <= 1e-12
        && (diff_fixture - 0.25).abs() <= 1e-15
        && (sr_fixture - 0.25).abs() <= 1e-15;
    report(
        3,
        "loss identities",
        pass,
        format!(
            "MSE(λ=0)−Diff {mse0:.1e}, SR(x=x_a,ε1=ε2)−Diff {sr_same:.1e}, expansion residual {expansion:.1e} (tol 1e-12); Diff fixture {diff_fixture}, SR fixture {sr_fixture} (expect 0.25)"
        ),
    );
    assert!(pass);
}

fn ring_prior() -> GmmModel {
    let means = (0..8)
        .map(|k| {
            let a = k as f64 * std::f64::consts::TAU / 8.0;
            Tensor::from_vec(vec![3.0 * a.cos(), 3.0 * a.sin()])
        })
        .collect();
    GmmModel::isotropic(means, 0.04).unwrap()
}

#[test]
fn c04_dsm_training_quality() {
    let prior = ring_prior();
    let mut rng = RngStream::new(14, 0);
    let data: Vec<Tensor> = (0..8192).map(|_| prior.sample(&mut rng).0).collect();
    let start = Instant::now();
    let net = MlpScoreNet::new(2, &[64, 64], SigmaFeatures::default(), &mut RngStream::new(14, 1)).unwrap();
    let (net, _) = train_dsm_traced(net, &data, &DsmTrainConfig::default()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let mut probe = RngStream::new(14, 2);
    let mut total = 0.0;
    let n = 2000;
    for k in 0..n {
        let sigma = noise(0.1 + 0.4 * k as f64 / (n - 1) as f64);
        let x = &prior.sample(&mut probe).0 + &(&probe.gaussian(&[2]) * sigma.sigma());
        let (a, b) = (net.score(&x, sigma), prior.score(&x, sigma));
        total += a.dot(&b) / (a.norm2() * b.norm2()).max(1e-300);
    }
    let cosine = total / n as f64;
    let pass = cosine >= 0.95 && secs < 120.0;
    report(
        4,
        "DSM score quality",
        pass,
        format!("mean cosine {cosine:.4} (min 0.95) over σ ∈ [0.1, 0.5]; training {secs:.1}s (limit 120s)"),
    );
    assert!(pass);
}

#[test]
fn c05_defense_efficacy() {
    let start = Instant::now();
    let b = bench();
    let clean = b.classifier.accuracy(&b.eval);
    let undefended = b.experiment(PurifierConfig::identity(), 5, 5).run().unwrap();
    let defended = b.experiment(PurifierConfig::default(), 5, 5).run().unwrap();
    let secs = start.elapsed().as_secs_f64();
    let pass = clean >= 95.0
        && undefended.robust_accuracy < 20.0
        && defended.robust_accuracy >= 80.0
        && defended.standard_accuracy - defended.robust_accuracy <= 10.0
        && secs < 180.0;
    report(
        5,
        "defense efficacy under Transfer-PGD",
        pass,
        format!(
            "clean {clean:.2}% (min 95); undefended robust {:.2}% (max 20); ScoreOpt-N standard {:.2} ± {:.2}, robust {:.2} ± {:.2} (min 80, gap ≤ 10); {secs:.1}s (limit 180s)",
            undefended.robust_accuracy,
            defended.standard_accuracy,
            defended.standard_std,
            defended.robust_accuracy,
            defended.robust_std
        ),
    );
    assert!(pass);
}

#[test]
fn c06_bpda_eot_resilience() {
    let b = bench();
    let run = |purifier: PurifierConfig| {
        let mut e = b.experiment(purifier, 5, 6);
        e.attack = AttackConfig::bpda_eot();
        e.run().unwrap()
    };
    let ours = run(PurifierConfig::default());
    let one_shot = run(PurifierConfig::one_shot(0.25));
    let pass = ours.robust_accuracy >= 50.0 && ours.robust_accuracy - one_shot.robust_accuracy >= 5.0;
    report(
        6,
        "BPDA(50)+EOT(15) resilience",
        pass,
        format!(
            "ScoreOpt-N robust {:.2} ± {:.2} (min 50); one-shot robust {:.2} ± {:.2} (margin ≥ 5)",
            ours.robust_accuracy, ours.robust_std, one_shot.robust_accuracy, one_shot.robust_std
        ),
    );
    assert!(pass);
}

#[test]
fn c07_diff_loss_step_sweep() {
    let b = bench();
    let cfg = PurifierConfig {
        method: PurifierKind::ScoreOptO,
        loss: LossKind::Diff,
        lr: 0.1,
        noise: NoiseRange::new(0.8, 1.2).unwrap(),
        ..PurifierConfig::default()
    };
    let grid = [5.0, 20.0, 100.0, 500.0];
    let recs = sweep(&b.experiment(cfg, 5, 7), SweepAxis::Steps, &grid).unwrap();
    let acc: Vec<f64> = recs.iter().map(|r| r.robust_accuracy).collect();
    let peak = acc.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let last = *acc.last().unwrap();
    let peak_at = acc.iter().position(|&a| a == peak).unwrap();
    let pass = peak_at < acc.len() - 1 && peak - last >= 10.0;
    report(
        7,
        "Diff loss degrades with many steps",
        pass,
        format!("robust accuracy at M = {grid:?}: {acc:.2?}; peak − last = {:.2} (min 10)", peak - last),
    );
    assert!(pass);
}

#[test]
fn c08_sr_insensitive_to_weight() {
    let b = bench();
    let grid = [0.5, 1.0, 2.0, 4.0];
    let base = PurifierConfig {
        method: PurifierKind::ScoreOptO,
        lr: 0.1,
        steps: 20,
        noise: NoiseRange::new(0.4, 0.6).unwrap(),
        ..PurifierConfig::default()
    };
    let spread = |recs: &[ResultRecord]| {
        let a: Vec<f64> = recs.iter().map(|r| r.robust_accuracy).collect();
        let hi = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = a.iter().cloned().fold(f64::INFINITY, f64::min);
        (hi - lo, a)
    };
    let mse = PurifierConfig {
        loss: LossKind::Mse { lambda: 1.0 },
        ..base.clone()
    };
    let sr = PurifierConfig {
        loss: LossKind::Sr { lambda_reg: 1.0 },
        ..base
    };
    let (mse_spread, mse_acc) = spread(&sweep(&b.experiment(mse, 5, 8), SweepAxis::Lambda, &grid).unwrap());
    let (sr_spread, sr_acc) = spread(&sweep(&b.experiment(sr, 5, 8), SweepAxis::LambdaReg, &grid).unwrap());
    let pass = sr_spread <= mse_spread;
    report(
        8,
        "SR weight sensitivity ≤ MSE weight sensitivity",
        pass,
        format!("λ = {grid:?}: MSE {mse_acc:.2?} (spread {mse_spread:.2}), SR {sr_acc:.2?} (spread {sr_spread:.2})"),
    );
    assert!(pass);
}

#[test]
fn c09_accuracy_nondecreasing_in_steps() {
    let b = bench();
    let grid = [1.0, 2.0, 3.0, 5.0, 10.0];
    let mut e = b.experiment(PurifierConfig::default(), 5, 9);
    e.attack = AttackConfig::bpda_eot();
    e.eval = e.eval.head(128);
    let recs = sweep(&e, SweepAxis::Steps, &grid).unwrap();
    let acc: Vec<f64> = recs.iter().map(|r| r.robust_accuracy).collect();
    let worst_drop = acc.windows(2).map(|w| w[0] - w[1]).fold(0.0f64, f64::max);
    let pass = worst_drop <= 2.0;
    report(
        9,
        "ScoreOpt-N accuracy nondecreasing in M",
        pass,
        format!("robust accuracy under BPDA+EOT at M = {grid:?}: {acc:.2?}; largest drop {worst_drop:.2} (tol 2)"),
    );
    assert!(pass);
}

#[test]
fn c10_inference_cost() {
    let b = bench();
    let grid = [1, 5, 10, 20, 50];
    let rows = bench_inference(&b.experiment(PurifierConfig::default(), 1, 10), &grid).unwrap();
    let (ours, base): (Vec<&BenchRow>, Vec<&BenchRow>) = rows.iter().partition(|r| r.method.starts_with("score-opt"));
    let per_step = |rs: &[&BenchRow]| {
        rs.iter().map(|r| r.seconds_per_sample).sum::<f64>() / rs.iter().map(|r| r.steps as f64).sum::<f64>()
    };
    let ratio = per_step(&ours) / per_step(&base);
    let ours5 = ours.iter().find(|r| r.steps == 5).unwrap().robust_accuracy;
    let base50 = base.iter().find(|r| r.steps == 50).unwrap().robust_accuracy;
    for r in &rows {
        println!(
            "  {:<16} steps {:>3}: {:.3e} s/sample, {:.3e} s/step, {} forwards, robust {:.2}",
            r.method, r.steps, r.seconds_per_sample, r.seconds_per_step, r.forwards_per_sample, r.robust_accuracy
        );
    }
    let pass = (1.5..=3.5).contains(&ratio) && ours5 > base50;
    report(
        10,
        "inference cost",
        pass,
        format!(
            "per-step cost ratio {ratio:.2} (band [1.5, 3.5]); ScoreOpt-N@5 robust {ours5:.2} vs baseline@50 {base50:.2}"
        ),
    );
    assert!(pass);
}

fn with_threads<T: Send>(n: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap().install(f)
}

#[test]
fn c11_determinism() {
    let kind = DatasetKind::GmmClasses {
        modes: 8,
        classes: 4,
        separation: 12.0,
        dim: 16,
        std: 0.2,
    };
    let pipeline = || {
        let train = gen_dataset(&kind, 400, 3).unwrap();
        let eval = gen_dataset(&kind, 96, 4).unwrap();
        let classifier = train_classifier(ClassifierArch::Mlp { hidden: 16 }, &train, 60, 0.02, 3).unwrap();
        let prior = kind.analytic_prior().unwrap().unwrap();
        let dsm = DsmTrainConfig {
            iterations: 200,
            ..DsmTrainConfig::default()
        };
        let net = MlpScoreNet::new(16, &[16], SigmaFeatures::default(), &mut RngStream::new(3, 0)).unwrap();
        let net = train_dsm(net, &train.points, &dsm).unwrap();
        let mut exp = Experiment {
            model: prior,
            classifier: classifier.clone(),
            eval,
            purifier: PurifierConfig::default(),
            threat: ThreatModel::default(),
            attack: AttackConfig::transfer_pgd(),
            trials: 2,
            seed: 3,
        };
        let mut records = vec![exp.run().unwrap()];
        records.extend(sweep(&exp, SweepAxis::Steps, &[1.0, 3.0]).unwrap());
        exp.attack = AttackConfig {
            iterations: 3,
            eot_samples: 2,
            ..AttackConfig::bpda_eot()
        };
        records.push(exp.run().unwrap());
        exp.attack.mode = OracleMode::OneShotApprox;
        records.push(exp.run().unwrap());
        (train, classifier, net, records)
    };
    let one = with_threads(1, pipeline);
    let four = with_threads(4, pipeline);
    let again = with_threads(4, pipeline);
    let same = |a: &(LabeledSet, Classifier, MlpScoreNet, Vec<ResultRecord>),
                b: &(LabeledSet, Classifier, MlpScoreNet, Vec<ResultRecord>)| {
        a.0 == b.0
            && a.1 == b.1
            && a.2 == b.2
            && a.3.len() == b.3.len()
            && a.3.iter().zip(&b.3).all(|(x, y)| x.same_outcome(y))
    };
    let pass = same(&one, &four) && same(&four, &again);
    report(
        11,
        "bit-exact determinism across worker counts",
        pass,
        format!("{} result records compared across 1 and 4 threads and a re-run", one.3.len()),
    );
    assert!(pass);
}
