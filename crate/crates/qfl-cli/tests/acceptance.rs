//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits non-zero if any failed.
//!
//! Reference values are recomputed here independently of the library
//! (nalgebra for linear algebra, Born-rule enumeration for BB84, closed
//! forms for the noise scales).

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use qfl_cli::RunConfig;
use qfl_core::condense::{condense_with_projection, sample_projection, stability_bound, CondenseSpec};
use qfl_core::data::{load_iris, load_mnist_idx, scale_to_range, Dataset};
use qfl_core::dp::{dp_pca_fit_transform, pca_fit, DpPcaSpec, FeatureBounds, NoiseMechanism};
use qfl_core::fed::run_experiment;
use qfl_core::linalg::Matrix;
use qfl_core::modelshare::{prune, reconstruct, svd_split, SvdPackage};
use qfl_core::optim::parameter_shift_gradient;
use qfl_core::qkd::{bb84_exchange, otp_decrypt, otp_encrypt, Bb84Options};
use qfl_core::qsim::{Circuit, Gate, StateVector};
use qfl_core::vqc::{EncodedDataset, ParameterVector, VqcConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn repo() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().unwrap()
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within_time(limit: Duration, start: Instant, detail: String) -> Outcome {
    let took = start.elapsed();
    check(took < limit, format!("{detail}; {:.1}s of {}s allowed", took.as_secs_f64(), limit.as_secs()))
}

fn na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

fn gradient_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for instance in 0..20 {
        let classes = 2 + instance % 3;
        let n = 8;
        let x: Vec<f64> = (0..n * 4).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
        let labels = (0..n).map(|_| rng.gen_range(0..classes)).collect();
        let ds = Dataset::new("g", Matrix::from_vec(n, 4, x).unwrap(), labels, classes).unwrap();
        let enc = EncodedDataset::new(&ds, &VqcConfig::new(4, classes)).unwrap();
        let theta: Vec<f64> = (0..16).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let (_, grad) = enc.loss_and_gradient(&theta).unwrap();
        for i in 0..16 {
            let (mut p, mut m) = (theta.clone(), theta.clone());
            p[i] += h;
            m[i] -= h;
            let fd = (enc.loss(&p).unwrap() - enc.loss(&m).unwrap()) / (2.0 * h);
            worst = worst.max((fd - grad[i]).abs());
        }
    }
    let mut worst_1q: f64 = 0.0;
    for k in 0..50 {
        let theta = -3.0 + 6.0 * k as f64 / 49.0;
        let g = parameter_shift_gradient(
            |t: &[f64]| {
                let c = Circuit::from_gates(1, [Gate::Ry(0, t[0])]).unwrap();
                StateVector::zero(1).unwrap().apply_circuit(&c).unwrap().expectation_z(0).unwrap()
            },
            &[theta],
        )
        .unwrap();
        worst_1q = worst_1q.max((g.gradient[0] + theta.sin()).abs());
    }
    let detail = format!("VQC max |shift - FD| {worst:.2e} (< 1e-4), 1-qubit max |g + sin| {worst_1q:.2e} (< 1e-12)");
    if worst < 1e-4 && worst_1q < 1e-12 {
        within_time(Duration::from_secs(30), start, detail)
    } else {
        Err(detail)
    }
}

fn dp_statistics() -> Outcome {
    let start = Instant::now();
    let (eps, delta, s) = (1.0_f64, 1e-5_f64, 1.0_f64);
    let sigma_ref = s * (2.0 * (1.25 / delta).ln()).sqrt() / eps;
    if (sigma_ref - 4.84480).abs() > 1e-5 {
        return Err(format!("closed-form sigma {sigma_ref} differs from 4.84480"));
    }
    let n = 1_000_000;
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let gauss = NoiseMechanism::Gaussian { epsilon: eps, delta, sensitivity: s };
    let draws: Vec<f64> = (0..n).map(|_| gauss.sample(&mut rng)).collect();
    let mean = draws.iter().sum::<f64>() / n as f64;
    let std = (draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let lap = NoiseMechanism::Laplace { epsilon: eps, sensitivity: s };
    let mad = (0..n).map(|_| lap.sample(&mut rng).abs()).sum::<f64>() / n as f64;
    let g_err = (std / sigma_ref - 1.0).abs();
    let l_err = (mad - 1.0).abs();
    let detail = format!(
        "gaussian std {std:.5} vs {sigma_ref:.5} ({:.3}%), laplace MAD {mad:.5} ({:.3}%)",
        100.0 * g_err,
        100.0 * l_err
    );
    if g_err <= 0.02 && l_err <= 0.02 {
        within_time(Duration::from_secs(10), start, detail)
    } else {
        Err(detail)
    }
}

fn dp_pca_checks() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let (n, d, k) = (200, 8, 8);
    let data: Vec<f64> = (0..n * d).map(|_| rng.gen::<f64>()).collect();
    let x = Matrix::from_vec(n, d, data.clone()).unwrap();

    // Reference: eigenvectors of the sample covariance.
    let xa = DMatrix::from_row_slice(n, d, &data);
    let mean = xa.row_mean();
    let mut centred = xa;
    for mut row in centred.row_iter_mut() {
        row -= &mean;
    }
    let cov = centred.transpose() * &centred / n as f64;
    let eig = cov.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let reference = &centred * eig.eigenvectors.select_columns(&order[..k]);

    let spec = DpPcaSpec {
        n_components: k,
        epsilon: 1e9,
        delta: 1e-5,
        bounds: FeatureBounds::Uniform(0.0, 1.0),
        data_norm: (d as f64).sqrt(),
    };
    let dp = dp_pca_fit_transform(&x, &[], &spec, &mut rng).map_err(|e| e.to_string())?.projected;
    let exact = pca_fit(&x, k).map_err(|e| e.to_string())?.transform(&x).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for projected in [&dp, &exact] {
        let p = na(projected);
        for c in 0..k {
            let same = (p.column(c) - reference.column(c)).amax();
            let flip = (p.column(c) + reference.column(c)).amax();
            worst = worst.max(same.min(flip));
        }
    }
    if worst >= 1e-6 {
        return Err(format!("epsilon=1e9 projection differs from exact PCA by {worst:.2e}"));
    }

    // The IRIS operating point, through the library and the full pipeline.
    let iris = load_iris(repo().join("data/iris.csv")).map_err(|e| e.to_string())?;
    let unit = scale_to_range(&iris, 1.0).map_err(|e| e.to_string())?;
    let spec = DpPcaSpec {
        n_components: 4,
        epsilon: 1.0,
        delta: 1e-5,
        bounds: FeatureBounds::Uniform(0.0, 1.0),
        data_norm: 1.0,
    };
    let out = dp_pca_fit_transform(&unit.features, &unit.labels, &spec, &mut rng).map_err(|e| e.to_string())?;
    if out.projected.rows() != 150
        || out.projected.cols() != 4
        || !out.projected.as_slice().iter().all(|v| v.is_finite())
    {
        return Err("IRIS DP-PCA output is malformed".into());
    }
    let mut cfg = RunConfig::from_path(&repo().join("configs/iris.toml")).map_err(|e| e.to_string())?;
    cfg.pca_components = Some(4);
    cfg.dp_pca = true;
    cfg.dp_pca_epsilon = 1.0;
    cfg.dp_pca_data_norm = 1.0;
    cfg.rounds = 1;
    cfg.maxiter = 5;
    cfg.validate().map_err(|e| e.to_string())?;
    let run = run_experiment(&cfg.plan(), &iris, None).map_err(|e| e.to_string())?;
    check(
        run.records.len() == 1,
        format!("epsilon=1e9 max deviation {worst:.2e} (< 1e-6); IRIS k=4 eps=1 pipeline ran, 1 round recorded"),
    )
}

/// Intercept-resend QBER by enumerating every branch with Born-rule
/// probabilities. Only rounds where sender and receiver bases agree count.
fn enumerated_qber() -> f64 {
    let state = |bit: usize, basis: usize| -> [f64; 2] {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        match (basis, bit) {
            (0, 0) => [1.0, 0.0],
            (0, _) => [0.0, 1.0],
            (_, 0) => [h, h],
            _ => [h, -h],
        }
    };
    let prob = |psi: [f64; 2], bit: usize, basis: usize| -> f64 {
        let phi = state(bit, basis);
        (psi[0] * phi[0] + psi[1] * phi[1]).powi(2)
    };
    let mut error = 0.0;
    for a_bit in 0..2 {
        for a_basis in 0..2 {
            for e_basis in 0..2 {
                for e_bit in 0..2 {
                    let p_eve = prob(state(a_bit, a_basis), e_bit, e_basis);
                    let resent = state(e_bit, e_basis);
                    let p_wrong = prob(resent, 1 - a_bit, a_basis);
                    error += 0.25 * 0.5 * p_eve * p_wrong;
                }
            }
        }
    }
    error
}

fn qkd_checks() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let clean = Bb84Options::default();
    for i in 0..1000 {
        let kp = bb84_exchange(128, &clean, &mut rng).map_err(|e| e.to_string())?;
        if kp.sender_key != kp.receiver_key || kp.sender_key.len() != 128 {
            return Err(format!("clean exchange {i} produced different keys"));
        }
    }
    let theory = enumerated_qber();
    if (theory - 0.25).abs() > 1e-12 {
        return Err(format!("enumerated QBER {theory} is not 0.25"));
    }
    let tapped = Bb84Options { eavesdrop: true, abort_threshold: 1.0, ..Bb84Options::default() };
    let mut errors = 0.0;
    let mut checked = 0usize;
    let mut per_exchange = 0.0;
    for _ in 0..100 {
        let kp = bb84_exchange(256, &tapped, &mut rng).map_err(|e| e.to_string())?;
        per_exchange += kp.qber;
        errors += kp.qber * kp.check_bits as f64;
        checked += kp.check_bits;
    }
    let mean_qber = per_exchange / 100.0;
    for i in 0..1000 {
        let len = rng.gen_range(1..200);
        let payload: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
        let key: Vec<bool> = (0..len * 8).map(|_| rng.gen()).collect();
        let blob = otp_encrypt(&payload, &key).map_err(|e| e.to_string())?;
        if otp_decrypt(&blob, &key).map_err(|e| e.to_string())? != payload {
            return Err(format!("OTP payload {i} did not round-trip"));
        }
    }
    let detail = format!(
        "1000 clean key pairs equal; tapped QBER {mean_qber:.4} in [0.20, 0.30] (pooled {:.4} over {checked} bits, theory {theory}); 1000 OTP round trips exact",
        errors / checked as f64
    );
    if (0.20..=0.30).contains(&mean_qber) {
        within_time(Duration::from_secs(60), start, detail)
    } else {
        Err(detail)
    }
}

fn svd_pipeline() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let err = |theta: &[f64], rec: &ParameterVector| -> f64 {
        theta.iter().zip(rec.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
    };
    let mut worst_bound: f64 = 0.0;
    for _ in 0..1000 {
        let theta: Vec<f64> = (0..16).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let (u, sigma, vt) = svd_split(&ParameterVector::new(theta.clone()), 4, 4).map_err(|e| e.to_string())?;
        let rec = reconstruct(&u, &sigma, &vt, 4, 4).map_err(|e| e.to_string())?;
        let mut s: Vec<f64> = DMatrix::from_row_slice(4, 4, &theta).singular_values().iter().copied().collect();
        s.sort_by(|a, b| b.total_cmp(a));
        let bound = (s[2] * s[2] + s[3] * s[3]).sqrt();
        worst_bound = worst_bound.max((err(&theta, &rec) - bound).abs());
    }
    let mut worst_low: f64 = 0.0;
    for i in 0..1000 {
        let rank = i % 3;
        let mut a = DMatrix::<f64>::zeros(4, 4);
        for _ in 0..rank {
            let u = DMatrix::from_fn(4, 1, |_, _| rng.gen_range(-2.0..2.0));
            let v = DMatrix::from_fn(1, 4, |_, _| rng.gen_range(-2.0..2.0));
            a += u * v;
        }
        let theta: Vec<f64> = a.transpose().as_slice().to_vec();
        let (u, sigma, vt) = svd_split(&ParameterVector::new(theta.clone()), 4, 4).map_err(|e| e.to_string())?;
        let rec = reconstruct(&u, &sigma, &vt, 4, 4).map_err(|e| e.to_string())?;
        worst_low = worst_low.max(err(&theta, &rec));
    }
    let mut lossless = true;
    for _ in 0..1000 {
        let theta = ParameterVector::new((0..16).map(|_| rng.gen_range(-3.0..3.0)).collect());
        let key: Vec<bool> = (0..SvdPackage::key_bits(4, 4)).map(|_| rng.gen()).collect();
        let (u, sigma, vt) = svd_split(&theta, 4, 4).map_err(|e| e.to_string())?;
        let plain = reconstruct(&u, &sigma, &vt, 4, 4).map_err(|e| e.to_string())?;
        let pkg = SvdPackage::seal(&theta, 4, 4, &key).map_err(|e| e.to_string())?;
        let wire = SvdPackage::from_bytes(&pkg.to_bytes()).map_err(|e| e.to_string())?;
        let opened = wire.open(&key).map_err(|e| e.to_string())?;
        lossless &= plain.iter().zip(opened.iter()).all(|(a, b)| a.to_bits() == b.to_bits());
    }
    check(
        worst_bound < 1e-9 && worst_low < 1e-9 && lossless,
        format!("max |err - tail| {worst_bound:.2e}, rank<=2 max err {worst_low:.2e} (both < 1e-9), encrypted leg bit-exact: {lossless}"),
    )
}

fn pruning_semantics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    for i in 0..100_000 {
        let len = rng.gen_range(1..=32);
        let tau = rng.gen_range(0.0..1.5);
        let theta: Vec<f64> = (0..len)
            .map(|j| match j % 5 {
                0 => tau,
                1 => -tau,
                _ => rng.gen_range(-2.0..2.0),
            })
            .collect();
        let once = prune(&ParameterVector::new(theta.clone()), tau);
        for (o, t) in once.iter().zip(&theta) {
            let ok = if t.abs() < tau { o.to_bits() == 0f64.to_bits() } else { o.to_bits() == t.to_bits() };
            if !ok {
                return Err(format!("vector {i}: {t} -> {o} at tau {tau}"));
            }
        }
        if prune(&once, tau) != once {
            return Err(format!("vector {i}: pruning is not idempotent"));
        }
    }
    Ok("100000 vectors: zero exactly below tau, untouched elsewhere, idempotent".into())
}

fn condensation() -> Outcome {
    let dir = repo().join("data/mnist");
    let ds =
        load_mnist_idx(dir.join("t10k-images.idx3-ubyte.gz"), dir.join("t10k-labels.idx1-ubyte.gz"), Some(&[0, 1, 2]))
            .map_err(|e| e.to_string())?;
    let n = ds.len();
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    let w = sample_projection(ds.feature_count(), 64, &mut rng);
    let m = 200;
    let eta = 0.5 * stability_bound(&w, m).map_err(|e| e.to_string())?;
    let spec =
        CondenseSpec { images_per_class: m, steps: 30, learning_rate: eta, batch_size: n, embedding_dim: 64, seed: 7 };
    let out = condense_with_projection(&ds, &spec, &w).map_err(|e| e.to_string())?;
    let rows = out.synthetic.len();
    let in_range = out.synthetic.features.as_slice().iter().all(|v| (0.0..=1.0).contains(v));
    let mut worst_rise: f64 = 0.0;
    for trace in &out.loss_traces {
        for pair in trace.windows(2) {
            worst_rise = worst_rise.max((pair[1] - pair[0]) / pair[0].max(f64::MIN_POSITIVE));
        }
    }
    let monotone = worst_rise <= 1e-12;
    let ratio_ok = out.size_ratio == 600.0 / n as f64;
    let drop: Vec<String> = out.loss_traces.iter().map(|t| format!("{:.3e}->{:.3e}", t[0], t[t.len() - 1])).collect();
    check(
        rows == 600 && in_range && monotone && ratio_ok,
        format!(
            "{rows} rows in [0,1]: {in_range}; eta {eta:.4} (half the bound), traces {} non-increasing: {monotone} (max relative rise {worst_rise:.1e}); ratio {} = 600/{n}: {ratio_ok}",
            drop.join(", "),
            out.size_ratio
        ),
    )
}

fn iris_runs(config: &str) -> Result<Vec<qfl_core::fed::ExperimentOutcome>, String> {
    let base = RunConfig::from_path(&repo().join("configs").join(config)).map_err(|e| e.to_string())?;
    let ds = base.source().load().map_err(|e| e.to_string())?;
    (0..5)
        .map(|seed| {
            let mut cfg = base.clone();
            cfg.seed = seed;
            run_experiment(&cfg.plan(), &ds, None).map_err(|e| e.to_string())
        })
        .collect()
}

fn metric(o: &qfl_core::fed::ExperimentOutcome, name: &str) -> qfl_core::fed::MetricSummary {
    o.summary.metric(name).expect("known metric")
}

fn end_to_end(baseline: &mut Option<Vec<f64>>) -> Outcome {
    let start = Instant::now();
    let runs = iris_runs("iris.toml")?;
    let mut passing = 0;
    let mut cells = Vec::new();
    for o in &runs {
        let train = metric(o, "device_train_accuracy").avg;
        let gplus = metric(o, "gplus_test_accuracy").final_value;
        if train >= 0.70 && gplus >= 0.60 {
            passing += 1;
        }
        cells.push(format!("{train:.3}/{gplus:.3}"));
    }
    *baseline = Some(runs.iter().map(|o| metric(o, "device_train_accuracy").final_value).collect());
    let detail = format!("train avg / G+ test per seed {}; {passing} of 5 seeds meet 0.70/0.60", cells.join(" "));
    if passing >= 3 {
        within_time(Duration::from_secs(15 * 60), start, detail)
    } else {
        Err(detail)
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn privacy_overhead(baseline: &Option<Vec<f64>>) -> Outcome {
    let baseline = baseline.as_ref().ok_or("baseline runs did not complete")?;
    let runs = iris_runs("iris-laplace.toml")?;
    let noisy: Vec<f64> = runs.iter().map(|o| metric(o, "device_train_accuracy").final_value).collect();
    let drops: Vec<f64> = baseline.iter().zip(&noisy).map(|(b, n)| b - n).collect();
    let med = median(drops.clone());
    let show = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ");
    check(
        med <= 0.15,
        format!(
            "final train baseline {} / laplace eps=1 {}; median drop {med:.3} (<= 0.15)",
            show(baseline),
            show(&noisy)
        ),
    )
}

fn without_wall_clock(path: &Path) -> Result<Vec<String>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or("empty rounds.csv")?;
    let col = header.split(',').position(|h| h == "wall_clock_seconds").ok_or("no wall_clock_seconds column")?;
    Ok(std::iter::once(header)
        .chain(lines)
        .map(|l| {
            let mut f: Vec<&str> = l.split(',').collect();
            f.remove(col);
            f.join(",")
        })
        .collect())
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let configs = ["iris.toml", "iris-laplace.toml", "iris-svd-qkd.toml", "genomic-dp.toml"];
    for name in configs {
        let mut outputs = Vec::new();
        for rep in 0..2 {
            let out = tmp.path().join(format!("{name}-{rep}"));
            let status = Command::new(env!("CARGO_BIN_EXE_qfl"))
                .arg("run")
                .arg(repo().join("configs").join(name))
                .arg("--out")
                .arg(&out)
                .output()
                .map_err(|e| e.to_string())?;
            if !status.status.success() {
                return Err(format!("{name}: {}", String::from_utf8_lossy(&status.stderr)));
            }
            outputs.push(without_wall_clock(&out.join("rounds.csv"))?);
        }
        if outputs[0] != outputs[1] {
            return Err(format!("{name}: rounds.csv differs between runs"));
        }
    }
    Ok(format!("{} configs run twice through the binary, rounds.csv identical outside wall_clock", configs.len()))
}

fn main() -> ExitCode {
    let mut baseline = None;
    let mut results = Vec::new();
    let mut run = |id: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("{tag} criterion {id:>2} {name}: {detail} [{:.1}s]", start.elapsed().as_secs_f64());
        results.push(outcome.is_ok());
    };

    run(1, "gradient oracle", &mut gradient_oracle);
    run(2, "noise statistics", &mut dp_statistics);
    run(3, "DP-PCA", &mut dp_pca_checks);
    run(4, "QKD", &mut qkd_checks);
    run(5, "SVD + QKD pipeline", &mut svd_pipeline);
    run(6, "pruning", &mut pruning_semantics);
    run(7, "condensation", &mut condensation);
    run(8, "IRIS end to end", &mut || end_to_end(&mut baseline));
    run(9, "privacy overhead", &mut || privacy_overhead(&baseline));
    run(10, "determinism", &mut determinism);

    let failed = results.iter().filter(|ok| !**ok).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
