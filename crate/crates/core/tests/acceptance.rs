//! Acceptance suite. Runs every criterion in order, prints one PASS/FAIL
//! line each and exits nonzero if any failed.

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qrobust::attacks::AttackKind;
use qrobust::cnn::CNNModel;
use qrobust::datasets::{default_specs, generate_fourier_dataset};
use qrobust::encoding::{aae_ansatz, exact_encode_report, normalize_signal, train_aae, AaeConfig};
use qrobust::experiment::{
    emit_report, load_data, obtain_model, run_experiment, run_noise_study, AttackSpec, DatasetSource,
    ExperimentConfig, ExperimentReport, ModelSpec, Task, TrainedModel, TrainingConfig,
};
use qrobust::qvc::{predict_scores, AaeCache, EncoderKind, QVCModel};
use qrobust::sim::{parameter_shift_gradient, run_circuit, CircuitSpec, Gate, PureState, ZObservable};

const ATTACKS: [AttackKind; 3] = [AttackKind::Fgsm, AttackKind::Pgd, AttackKind::Uap];
const CNN: &str = "cnn";
const QVC: &str = "qvc30";
const AAE_QVC: &str = "aae5_qvc30";

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn config(task: Task, train: usize, test: usize, models: Vec<ModelSpec>, grid: Vec<f64>, dir: &Path) -> ExperimentConfig {
    let cfg = ExperimentConfig {
        task,
        dataset: DatasetSource::Synthetic {
            train_per_class: train,
            test_per_class: test,
            specs: None,
        },
        models,
        attacks: ATTACKS.iter().map(|&k| AttackSpec::new(k)).collect(),
        psr_grid: grid,
        noise_p: 0.0,
        seed: 0,
        output_dir: dir.to_path_buf(),
        training: TrainingConfig::default(),
        stealth_alpha: 0.05,
        save_adversarial: false,
    };
    cfg.validate().expect("acceptance config");
    cfg
}

fn all_models() -> Vec<ModelSpec> {
    vec![
        ModelSpec::Cnn,
        ModelSpec::Qvc { layers: 30 },
        ModelSpec::AaeQvc {
            aae_layers: 5,
            qvc_layers: 30,
        },
    ]
}

const GRID: [f64; 5] = [-40.0, -30.0, -25.0, -20.0, -15.0];

fn criterion_1() -> Outcome {
    let c2 = CNNModel::new(2, 0).unwrap().parameter_count();
    let c3 = CNNModel::new(3, 0).unwrap().parameter_count();
    outcome(c2 == 133_298 && c3 == 133_315, format!("C=2: {c2}, C=3: {c3}"))
}

fn criterion_2() -> Outcome {
    let aae5 = aae_ansatz(5).gate_count();
    let aae20 = aae_ansatz(20).gate_count();
    let qvc = QVCModel::random(30, 3, EncoderKind::Exact, 1.0, 0).unwrap();
    let body = qvc.ansatz().gate_count();
    let total = qvc.count_parameters_and_gates(aae5).1;
    let data = generate_fourier_dataset(&default_specs(3), 10, 11).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut signals: Vec<Vec<f64>> = data.samples.iter().map(|s| s.values.clone()).collect();
    signals.extend((0..10).map(|_| (0..256).map(|_| rng.random_range(-1.0..1.0)).collect()));
    let counts: Vec<usize> = signals
        .iter()
        .map(|s| exact_encode_report(&normalize_signal(s).unwrap()).gate_count)
        .collect();
    let (lo, hi) = (*counts.iter().min().unwrap(), *counts.iter().max().unwrap());
    outcome(
        aae5 == 155 && aae20 == 620 && body == 960 && total == 1115 && lo >= 700 && hi <= 1100,
        format!(
            "AAE5={aae5} AAE20={aae20} QVC30 body={body} 5AAE-QVC30={total} exact encode over {} signals in [{lo}, {hi}]",
            counts.len()
        ),
    )
}

fn random_circuit(rng: &mut ChaCha8Rng, n_gates: usize) -> (CircuitSpec, Vec<f64>) {
    let n = 8;
    let mut c = CircuitSpec::new(n);
    let mut p = 0;
    for _ in 0..n_gates {
        let q = rng.random_range(0..n);
        match rng.random_range(0..4) {
            0 => {
                c.push_param(Gate::rx(q, 0.0), p);
                p += 1;
            }
            1 => {
                c.push_param(Gate::ry(q, 0.0), p);
                p += 1;
            }
            2 => {
                c.push_param(Gate::rz(q, 0.0), p);
                p += 1;
            }
            _ => {
                let t = (q + 1 + rng.random_range(0..n - 1)) % n;
                c.push(Gate::cnot(q, t));
            }
        }
    }
    if p == 0 {
        c.push_param(Gate::ry(0, 0.0), 0);
        p = 1;
    }
    let params = (0..p).map(|_| rng.random_range(-3.0..3.0)).collect();
    (c, params)
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_circuit: f64 = 0.0;
    let mut circuit_ok = true;
    for _ in 0..64 {
        let (c, params) = random_circuit(&mut rng, 40);
        let obs = ZObservable::new((0..8).map(|q| (q, rng.random_range(-1.0..1.0))).collect());
        let k = rng.random_range(0..params.len());
        let init = PureState::zero(8);
        let ps = parameter_shift_gradient(&c, &params, &init, &obs, k).unwrap();
        let f = |p: &[f64]| obs.evaluate(&run_circuit(&c, p, &init).unwrap()).unwrap();
        let h = 1e-4;
        let mut up = params.clone();
        up[k] += h;
        let mut down = params.clone();
        down[k] -= h;
        let fd = (f(&up) - f(&down)) / (2.0 * h);
        let err = (ps - fd).abs();
        let ok = if fd.abs() < 1e-3 { err <= 1e-8 } else { err / fd.abs() <= 1e-5 };
        circuit_ok &= ok;
        if fd.abs() >= 1e-3 {
            worst_circuit = worst_circuit.max(err / fd.abs());
        }
    }

    let mut m = CNNModel::new(3, 4).unwrap();
    let x: Vec<f64> = (0..256).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y = 1;
    let (pg, _) = m.backward(&x, y).unwrap();
    let loss = |m: &CNNModel| m.forward(&x).unwrap().cross_entropy(y);
    let h = 1e-6;
    let mut worst_cnn: f64 = 0.0;
    let mut cnn_ok = true;
    for (_, range) in m.param_blocks() {
        for _ in 0..32 {
            let i = rng.random_range(range.clone());
            let orig = m.params[i];
            m.params[i] = orig + h;
            let lp = loss(&m);
            m.params[i] = orig - h;
            let lm = loss(&m);
            m.params[i] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let scale = pg[i].abs().max(1e-4);
            let rel = (fd - pg[i]).abs() / scale;
            cnn_ok &= rel <= 1e-4;
            worst_cnn = worst_cnn.max(rel);
        }
    }
    outcome(
        circuit_ok && cnn_ok,
        format!("parameter-shift worst rel err {worst_circuit:.2e} (64 pairs); CNN worst rel err {worst_cnn:.2e} (32 per block)"),
    )
}

fn criterion_4() -> Outcome {
    let data = generate_fourier_dataset(&default_specs(3), 17, 21).unwrap();
    let signals: Vec<_> = data.samples.iter().take(50).map(|s| normalize_signal(&s.values).unwrap()).collect();
    let layers = [3, 5, 10, 15, 20];
    let means: Vec<f64> = layers
        .iter()
        .map(|&l| {
            let cfg = AaeConfig::with_layers(l);
            signals
                .iter()
                .map(|s| train_aae(s, &cfg, 0).unwrap().achieved_fidelity)
                .sum::<f64>()
                / signals.len() as f64
        })
        .collect();
    let monotone = means.windows(2).all(|w| w[1] >= w[0] - 0.01);
    let band = (0.85..=0.95).contains(&means[1]);
    let shown: Vec<String> = layers.iter().zip(&means).map(|(l, m)| format!("L{l}={m:.4}")).collect();
    outcome(monotone && band, format!("mean fidelity {}", shown.join(" ")))
}

fn clean(report: &ExperimentReport, model: &str) -> f64 {
    report.clean_accuracy(model).expect("clean row")
}

fn criterion_5(r: &ExperimentReport) -> Outcome {
    let (c, q, a) = (clean(r, CNN), clean(r, QVC), clean(r, AAE_QVC));
    outcome(
        c >= 0.95 && q >= 0.85 && (q - a).abs() <= 0.05,
        format!("CNN={c:.4} QVC-30={q:.4} 5AAE-QVC-30={a:.4} (gap {:.1} points)", 100.0 * (q - a)),
    )
}

fn criterion_6(r: &ExperimentReport) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for model in [CNN, QVC, AAE_QVC] {
        for attack in ATTACKS {
            let mut acc = vec![clean(r, model)];
            acc.extend(r.curve(model, model, attack).iter().map(|row| row.accuracy));
            let monotone = acc.windows(2).all(|w| w[1] <= w[0] + 0.02);
            let drop = acc[0] - acc[acc.len() - 1];
            let ok = monotone && drop > 0.15;
            pass &= ok;
            parts.push(format!(
                "{model}/{}: drop {:.1}{}",
                attack.name(),
                100.0 * drop,
                if monotone { "" } else { " non-monotone" }
            ));
        }
    }
    outcome(pass, parts.join("; "))
}

fn criterion_7(r: &ExperimentReport) -> Outcome {
    let mut asym = true;
    let mut band = true;
    let mut parts = Vec::new();
    for q in [QVC, AAE_QVC] {
        for attack in ATTACKS {
            let cnn_under_q = r.curve(CNN, q, attack);
            let q_under_cnn = r.curve(q, CNN, attack);
            let cnn_drop = clean(r, CNN) - cnn_under_q.last().unwrap().accuracy;
            let q_drop = clean(r, q) - q_under_cnn.last().unwrap().accuracy;
            let ok = cnn_drop >= q_drop + 0.10;
            asym &= ok;
            let worst = q_under_cnn
                .iter()
                .map(|row| (clean(r, q) - row.accuracy).abs())
                .fold(0.0, f64::max);
            band &= worst <= 0.10;
            parts.push(format!(
                "{}: CNN<-{q} drop {:.1} vs {q}<-CNN drop {:.1}, {q} max dev {:.1}",
                attack.name(),
                100.0 * cnn_drop,
                100.0 * q_drop,
                100.0 * worst
            ));
        }
    }
    outcome(
        asym && band,
        format!(
            "asymmetry {} ; quantum within 10 points under CNN-crafted {} ; {}",
            if asym { "holds" } else { "VIOLATED" },
            if band { "holds" } else { "VIOLATED" },
            parts.join("; ")
        ),
    )
}

fn criterion_8(r: &ExperimentReport) -> Outcome {
    let self_rate = r
        .stealth
        .iter()
        .find(|s| s.attack == "none")
        .map(|s| s.perceptible_rate)
        .unwrap_or(f64::NAN);
    let mut pass = self_rate == 0.0;
    let mut parts = vec![format!("clean self-rate {self_rate}")];
    for source in [CNN, QVC, AAE_QVC] {
        for attack in ATTACKS {
            let rates: Vec<f64> = r.stealth_curve(source, attack).iter().map(|s| s.perceptible_rate).collect();
            if !rates.windows(2).all(|w| w[1] >= w[0]) {
                pass = false;
                parts.push(format!("{source}/{} decreasing {rates:?}", attack.name()));
            }
        }
    }
    for q in [QVC, AAE_QVC] {
        for attack in [AttackKind::Fgsm, AttackKind::Pgd] {
            let qr = r.stealth_curve(q, attack);
            let cr = r.stealth_curve(CNN, attack);
            let violations = qr
                .iter()
                .zip(&cr)
                .filter(|(a, b)| a.perceptible_rate > b.perceptible_rate)
                .count();
            pass &= violations <= 1;
            let last = qr.len() - 1;
            parts.push(format!(
                "{q} vs CNN {}: {violations} violations, strongest {:.3} vs {:.3}",
                attack.name(),
                qr[last].perceptible_rate,
                cr[last].perceptible_rate
            ));
        }
    }
    outcome(pass, parts.join("; "))
}

fn criterion_9(dir: &Path) -> Outcome {
    let spec = ModelSpec::AaeQvc {
        aae_layers: 5,
        qvc_layers: 30,
    };
    let mut cfg = config(Task::ThreeClass, 67, 33, vec![ModelSpec::Cnn, spec], GRID.to_vec(), dir);
    cfg.noise_p = 0.02;
    let report = run_noise_study(&cfg).unwrap();
    emit_report(&report, &dir.join("report")).unwrap();
    let noisy_name = format!("{AAE_QVC}_noise0.02");
    let noiseless = clean(&report, AAE_QVC);
    let noisy = clean(&report, &noisy_name);
    let mut worst: f64 = 0.0;
    for attack in ATTACKS {
        for row in report.curve(&noisy_name, CNN, attack) {
            worst = worst.max((noisy - row.accuracy).abs());
        }
    }

    // p = 0 on the density backend against the pure-state pipeline
    let data = load_data(&cfg).unwrap();
    let entry = obtain_model(&cfg, &data, &spec, 0.0, true).unwrap();
    let TrainedModel::Qvc(q) = &entry.model else { unreachable!() };
    let xs: Vec<&[f64]> = data.test.samples.iter().map(|s| s.values.as_slice()).collect();
    let mut cache = AaeCache::new();
    let pure = q.encoder.encode_set(&xs, &mut cache).unwrap();
    let dense = q.encoder.with_noise(0.0).encode_with_backend(&xs, &mut cache, true).unwrap();
    let a = predict_scores(&q.model, &pure).unwrap();
    let b = predict_scores(&q.model, &dense).unwrap();
    let p0_dev = a
        .iter()
        .zip(&b)
        .flat_map(|(x, y)| x.probabilities.iter().zip(&y.probabilities).map(|(u, v)| (u - v).abs()))
        .fold(0.0, f64::max);

    outcome(
        noisy < noiseless && worst <= 0.10 && p0_dev <= 1e-8,
        format!(
            "noiseless {noiseless:.4} -> p=0.02 {noisy:.4}; max deviation under CNN-crafted {:.1} points; p=0 density vs pure max prob diff {p0_dev:.1e}",
            100.0 * worst
        ),
    )
}

fn criterion_10(root: &Path) -> Outcome {
    let files = ["accuracy.csv", "stealth.csv", "resources.csv"];
    let mut contents = Vec::new();
    for run in ["run_a", "run_b"] {
        let dir = root.join(run);
        let cfg = config(Task::Binary, 100, 50, all_models(), vec![-30.0, -20.0, -15.0], &dir);
        run_experiment(&cfg).unwrap();
        contents.push(
            files
                .iter()
                .map(|f| std::fs::read(dir.join(f)).unwrap())
                .collect::<Vec<_>>(),
        );
    }
    let same = contents[0] == contents[1];
    let bytes: usize = contents[0].iter().map(|c| c.len()).sum();
    outcome(same && bytes > 0, format!("two seeded binary runs, {bytes} report bytes, identical = {same}"))
}

fn main() -> ExitCode {
    let root = tempfile::tempdir().expect("temp dir");
    let mut failed = Vec::new();
    let mut report_line = |n: usize, name: &str, start: Instant, o: Outcome| {
        println!(
            "criterion {n:>2} [{name}]: {} ({:.0}s) {}",
            if o.pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            o.detail
        );
        if !o.pass {
            failed.push(n);
        }
    };

    let t = Instant::now();
    report_line(1, "parameter counts", t, criterion_1());
    let t = Instant::now();
    report_line(2, "gate counts", t, criterion_2());
    let t = Instant::now();
    report_line(3, "gradient oracles", t, criterion_3());
    let t = Instant::now();
    report_line(4, "AAE fidelity", t, criterion_4());

    let t = Instant::now();
    let dir = root.path().join("three_class");
    let cfg = config(Task::ThreeClass, 500, 100, all_models(), GRID.to_vec(), &dir);
    let pipeline = run_experiment(&cfg).expect("3-class pipeline");
    println!("3-class pipeline finished in {:.0}s", t.elapsed().as_secs_f64());
    let t = Instant::now();
    report_line(5, "clean accuracy", t, criterion_5(&pipeline));
    report_line(6, "white-box degradation", t, criterion_6(&pipeline));
    report_line(7, "black-box transfer asymmetry", t, criterion_7(&pipeline));
    report_line(8, "stealthiness", t, criterion_8(&pipeline));

    let t = Instant::now();
    report_line(9, "noise study", t, criterion_9(&root.path().join("noise")));
    let t = Instant::now();
    report_line(10, "determinism", t, criterion_10(&root.path().join("determinism")));

    if failed.is_empty() {
        println!("acceptance: all 10 criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}");
        ExitCode::FAILURE
    }
}
