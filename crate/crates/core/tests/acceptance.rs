//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Runs as a plain binary so the lines always reach the output.

mod common;

use std::f64::consts::PI;
use std::process::Command;
use std::time::Instant;

use emoctx::ablation::{ablation_grid, segs_percent, skip_context, AblationRow, SkipSpec};
use emoctx::cli::{decode_checkpoint, encode_checkpoint, save_checkpoint, CheckpointError, CheckpointMeta};
use emoctx::corpus::{label_name, CuePlacement};
use emoctx::dsp::{estimate_pitch, feature_fingerprint, hz_to_mel, stft_power, FrameConfig, MelConfig, PitchConfig};
use emoctx::metrics::{render_csv, score};
use emoctx::model::{build_forward, init_model, loss_graph, predict, ModelConfig, ModelParams, SequenceBatch};
use emoctx::numerics::{gradient_check, Graph};
use emoctx::training::{pad_batch, train, Trained};
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use common::{pinned_train, random_features, SynthData};

type Outcome = Result<String, String>;

const TABLE_SPECS: [&str; 10] = [
    "0-30", "0-100", "0-200", "20-0", "30-0", "100-0", "200-0", "300-0", "20-200", "200-100",
];

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gradient_integrity() -> Outcome {
    let start = Instant::now();
    let cfg = ModelConfig::toy(8, 4);
    let p = init_model::<f64>(&cfg, 12).map_err(|e| e.to_string())?;
    let x = random_features(6, 23, 13);
    let batch = SequenceBatch::single(&x, None).map_err(|e| e.to_string())?;
    let (mut g, loss, _) = loss_graph::<f64>(&cfg, &batch, &[2]).map_err(|e| e.to_string())?;
    let rep = gradient_check(&mut g, p.tensors(), loss, 5e-4, 200, 5).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    check(
        rep.max_rel_error < 1e-4 && secs < 60.0,
        format!("max relative error {:.2e} over {} coords, {secs:.2} s", rep.max_rel_error, rep.coordinates_checked),
    )
}

fn attention_normalization() -> Outcome {
    let cfg = ModelConfig::toy(8, 4);
    let p = init_model::<f64>(&cfg, 21).map_err(|e| e.to_string())?;
    let mut specs: Vec<SkipSpec> = TABLE_SPECS.iter().map(|s| s.parse().unwrap()).collect();
    specs.push(SkipSpec::BASELINE);
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(2024);
    let mut worst_sum = 0.0f64;
    let mut worst_pad = 0.0f64;
    let mut skipped = Vec::new();
    for i in 0..1000 {
        let t = rng.gen_range(1..=400);
        let spec = specs[rng.gen_range(0..specs.len())];
        let f = random_features(t, 23, 10_000 + i);
        let (g, modified) = skip_context(&f, spec);
        let expected = if modified { t - spec.left - spec.right } else { t };
        let w = predict(&p, &g).map_err(|e| e.to_string())?.weights;
        if w.len() != expected || w.iter().any(|&v| v < 0.0) {
            return Err(format!("utterance {i}: {} weights for T'={expected}", w.len()));
        }
        worst_sum = worst_sum.max((w.iter().sum::<f64>() - 1.0).abs());
        skipped.push(g);
    }
    for chunk in skipped.chunks(8) {
        let refs: Vec<_> = chunk.iter().collect();
        let batch = pad_batch(&refs).map_err(|e| e.to_string())?;
        let mut graph = Graph::new();
        let nodes = build_forward(&mut graph, &cfg, &batch).map_err(|e| e.to_string())?;
        graph.evaluate(p.tensors(), nodes.logits).map_err(|e| e.to_string())?;
        let w = graph.value(nodes.final_attention().weights).unwrap();
        for (b, seq) in chunk.iter().enumerate() {
            for t in seq.len()..batch.steps() {
                worst_pad = worst_pad.max(w.get(b, t));
            }
        }
    }
    check(
        worst_sum < 1e-5 && worst_pad < 1e-6,
        format!("1000 utterances: max |sum-1| {worst_sum:.1e}, max padded weight {worst_pad:.1e}"),
    )
}

fn skip_rule_oracle() -> Outcome {
    let mut checked = 0;
    for spec in TABLE_SPECS {
        let spec: SkipSpec = spec.parse().unwrap();
        for t in 1..=400 {
            let f = random_features(t, 3, t as u64);
            let (out, modified) = skip_context(&f, spec);
            let oracle: &[f64] = if t > spec.left + spec.right {
                &f.data()[spec.left * 3..(t - spec.right) * 3]
            } else {
                f.data()
            };
            if out.data() != oracle || modified != (oracle.len() != f.data().len()) {
                return Err(format!("spec {spec} at T={t}"));
            }
            checked += 1;
        }
    }
    let at_sum = skip_context(&random_features(300, 3, 1), SkipSpec::new(200, 100));
    let past = skip_context(&random_features(301, 3, 1), SkipSpec::new(200, 100));
    check(
        !at_sum.1 && at_sum.0.len() == 300 && past.1 && past.0.len() == 1,
        format!("{checked} (spec, T) pairs exact; 200-100 leaves T=300 unchanged, cuts T=301 to 1"),
    )
}

fn metric_oracles() -> Outcome {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(77);
    for i in 0..500 {
        let c = rng.gen_range(1..=4);
        let n = rng.gen_range(1..=12);
        let preds: Vec<usize> = (0..n).map(|_| rng.gen_range(0..c)).collect();
        let refs: Vec<usize> = (0..n).map(|_| rng.gen_range(0..c)).collect();
        let (ua, wa) = score(&preds, &refs, c).map_err(|e| e.to_string())?;
        let correct = preds.iter().zip(&refs).filter(|(p, r)| p == r).count();
        let recalls: Vec<f64> = (0..c)
            .filter_map(|k| {
                let support = refs.iter().filter(|&&r| r == k).count();
                let hits = preds.iter().zip(&refs).filter(|&(&p, &r)| r == k && p == k).count();
                (support > 0).then(|| hits as f64 / support as f64)
            })
            .collect();
        let oracle_wa = recalls.iter().sum::<f64>() / recalls.len() as f64;
        if ua != correct as f64 / n as f64 || wa != oracle_wa {
            return Err(format!("instance {i}: ({ua}, {wa}) vs recount"));
        }
        let perm: Vec<usize> = (0..c).rev().collect();
        let pp: Vec<usize> = preds.iter().map(|&p| perm[p]).collect();
        let pr: Vec<usize> = refs.iter().map(|&r| perm[r]).collect();
        let (ua2, wa2) = score(&pp, &pr, c).map_err(|e| e.to_string())?;
        if ua2 != ua || (wa2 - wa).abs() > 1e-12 {
            return Err(format!("instance {i}: not invariant under relabelling"));
        }
    }
    // TP=3, FN=1, TN=2, FP=1 with class 1 positive
    let refs = [1, 1, 1, 1, 0, 0, 0];
    let preds = [1, 1, 1, 0, 0, 0, 1];
    let (_, wa) = score(&preds, &refs, 2).map_err(|e| e.to_string())?;
    check(
        (wa - 17.0 / 24.0).abs() < 1e-15,
        format!("500 instances exact, relabelling invariant; binary WA {wa:.6} = 17/24"),
    )
}

fn train_global(data: &SynthData) -> Result<(Trained, f64), String> {
    let (tc, mc) = pinned_train();
    let start = Instant::now();
    let out = train(&tc, &mc, &data.train, &data.test).map_err(|e| e.to_string())?;
    Ok((out, start.elapsed().as_secs_f64()))
}

fn same_bits(a: &ModelParams<f32>, b: &ModelParams<f32>) -> bool {
    a.tensors().iter().all(|(k, t)| {
        let u = b.get(k);
        t.dims() == u.dims() && t.data().iter().zip(u.data()).all(|(x, y)| x.to_bits() == y.to_bits())
    })
}

fn learnability(data: &SynthData, first: &(Trained, f64)) -> Outcome {
    let (out, secs) = first;
    let best = out.log.records.iter().map(|r| r.ua).fold(0.0, f64::max);
    let (again, _) = train_global(data)?;
    let reproducible = same_bits(&out.params, &again.params) && again.best_epoch == out.best_epoch;
    let epochs = out.log.records.len();
    let ua = out.log.records[out.best_epoch - 1].ua;
    check(
        ua >= 0.95 && epochs <= 30 && *secs < 600.0 && reproducible,
        format!(
            "held-out UA {ua:.3} at best epoch {} (peak {best:.3}), {epochs} epochs in {secs:.0} s, rerun bit-identical: {reproducible}",
            out.best_epoch
        ),
    )
}

fn ua_of(rows: &[AblationRow], spec: &str) -> f64 {
    let spec: SkipSpec = spec.parse().unwrap();
    rows.iter().find(|r| r.spec == spec).unwrap().ua
}

fn context_direction() -> Outcome {
    let (tc, mc) = pinned_train();
    let specs = SkipSpec::parse_list("0-0,50-0,0-50").unwrap();
    let mut lines = Vec::new();
    let mut ok = true;
    for (placement, cue, other) in [(CuePlacement::LeftOnly, "50-0", "0-50"), (CuePlacement::RightOnly, "0-50", "50-0")] {
        let data = common::synth_data(placement);
        let out = train(&tc, &mc, &data.train, &data.test).map_err(|e| e.to_string())?;
        let rows = ablation_grid(&out.params, &data.test, &specs).map_err(|e| e.to_string())?;
        let base = 100.0 * ua_of(&rows, "0-0");
        let cut = 100.0 * ua_of(&rows, cue);
        let kept = 100.0 * ua_of(&rows, other);
        ok &= base - cut >= 10.0 && (kept - base).abs() <= 5.0;
        lines.push(format!(
            "{}: UA 0-0 {base:.1}, cue-side {cue} {cut:.1}, far-side {other} {kept:.1}",
            placement.name()
        ));
    }
    check(ok, lines.join("; "))
}

fn segs_bookkeeping() -> Outcome {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(5);
    for i in 0..100 {
        let n = rng.gen_range(1..60);
        let lengths: Vec<usize> = (0..n).map(|_| rng.gen_range(1..600)).collect();
        let spec = SkipSpec::new(rng.gen_range(0..300), rng.gen_range(0..300));
        let count = lengths.iter().filter(|&&t| t > spec.left + spec.right).count();
        let expected = (!spec.is_baseline()).then(|| (1000.0 * count as f64 / n as f64).round() / 10.0);
        if segs_percent(&lengths, spec) != expected {
            return Err(format!("list {i}, spec {spec}"));
        }
    }
    let row = AblationRow {
        spec: SkipSpec::BASELINE,
        ua: 0.733,
        wa: 0.7,
        segs_percent: segs_percent(&[10, 20], SkipSpec::BASELINE),
    };
    let csv = render_csv(&[row]);
    check(
        csv.lines().nth(1) == Some("0-0,73.30,70.00,-"),
        format!("100 lists match brute-force counts; baseline row `{}`", csv.lines().nth(1).unwrap_or("")),
    )
}

fn dsp_oracles() -> Outcome {
    let cfg = FrameConfig::default();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(8);
    let x: Vec<f64> = (0..16_000).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let spec = stft_power(&x, &cfg).map_err(|e| e.to_string())?;
    let win = cfg.window_samples();
    let hop = cfg.hop_samples();
    let emph: Vec<f64> = (0..x.len())
        .map(|i| if i == 0 { x[0] } else { x[i] - cfg.preemphasis * x[i - 1] })
        .collect();
    let hamming: Vec<f64> = (0..win).map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (win - 1) as f64).cos()).collect();
    let mut worst = 0.0f64;
    for t in (0..spec.n_frames).step_by(7) {
        let frame: Vec<f64> = (0..win).map(|i| emph[t * hop + i] * hamming[i]).collect();
        for k in 0..spec.n_bins {
            let (mut re, mut im) = (0.0, 0.0);
            for (n, v) in frame.iter().enumerate() {
                let a = -2.0 * PI * (k * n) as f64 / cfg.fft_size as f64;
                re += v * a.cos();
                im += v * a.sin();
            }
            let naive = re * re + im * im;
            let rel = (spec.frame(t)[k] - naive).abs() / naive.max(1e-12);
            worst = worst.max(rel);
        }
    }
    let sine: Vec<f64> = (0..16_000).map(|n| (2.0 * PI * 220.0 * n as f64 / 16_000.0).sin()).collect();
    let contour = estimate_pitch(&sine, &PitchConfig::default()).map_err(|e| e.to_string())?;
    let voiced: Vec<f64> = contour.voiced_f0().collect();
    let pitch_err = voiced.iter().map(|f| (f - 220.0).abs()).fold(0.0, f64::max);
    let mel = hz_to_mel(1000.0);
    check(
        worst < 1e-6 && !voiced.is_empty() && pitch_err <= 3.0 && (mel - 1000.0).abs() < 0.1,
        format!(
            "STFT vs naive DFT max rel {worst:.1e}; 220 Hz sine: {} voiced frames, max |f0-220| {pitch_err:.2} Hz; mel(1000) = {mel:.3}",
            voiced.len()
        ),
    )
}

fn persistence() -> Outcome {
    let big = init_model::<f32>(&ModelConfig::full(), 1).map_err(|e| e.to_string())?;
    let meta = CheckpointMeta {
        seed: 1,
        epoch: 4,
        config_hash: 42,
        feature_fingerprint: 7,
    };
    let bytes = encode_checkpoint(&big, &meta);
    let back = decode_checkpoint(&bytes, None).map_err(|e| e.to_string())?;
    let exact = same_bits(&big, &back.params) && back.meta == meta;
    let mut bad = bytes.clone();
    bad[..4].copy_from_slice(b"NOPE");
    let magic = decode_checkpoint(&bad, None).unwrap_err();
    let smaller = ModelConfig::toy(256, 128);
    let shape = decode_checkpoint(&bytes, Some(&smaller)).unwrap_err();
    let distinct = matches!(magic, CheckpointError::BadMagic)
        && matches!(shape, CheckpointError::ShapeMismatch { .. })
        && magic.to_string() != shape.to_string();
    check(
        exact && distinct && magic.to_string().contains("not a checkpoint"),
        format!(
            "{} parameters bit-exact: {exact}; magic -> `{magic}`; hidden 512 vs 256 -> `{shape}`",
            big.num_parameters()
        ),
    )
}

fn figure_determinism(data: &SynthData, params: &ModelParams<f32>) -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let ck = tmp.path().join("model.batt");
    let meta = CheckpointMeta {
        seed: 0,
        epoch: 0,
        config_hash: 0,
        feature_fingerprint: feature_fingerprint(&FrameConfig::default(), &MelConfig::default()),
    };
    save_checkpoint(params, &meta, &ck).map_err(|e| e.to_string())?;
    let manifest = data.dir.path().join("manifest.jsonl");
    let utt = "test-sad-000";
    let mut svgs = Vec::new();
    for run in ["a", "b"] {
        let out = tmp.path().join(run);
        let status = Command::new(env!("CARGO_BIN_EXE_emoctx"))
            .args(["attend", "--utt", utt, "--specs", "0-0,20-0"])
            .arg("--manifest")
            .arg(&manifest)
            .arg("--checkpoint")
            .arg(&ck)
            .arg("--out-dir")
            .arg(&out)
            .args(["--set", "model.hidden_dim=32", "--set", "model.context_dim=16", "--set", "run.seed=0"])
            .env_remove("EMOCTX_OUT_DIR")
            .output()
            .map_err(|e| e.to_string())?;
        if !status.status.success() {
            return Err(String::from_utf8_lossy(&status.stderr).into_owned());
        }
        let read = |spec: &str| std::fs::read(out.join(format!("attend/{utt}_{spec}.svg")));
        svgs.push((read("0-0").map_err(|e| e.to_string())?, read("20-0").map_err(|e| e.to_string())?));
    }
    let identical = svgs[0] == svgs[1];
    let ex = data.test.iter().find(|e| e.id == utt).unwrap();
    let mut labels = Vec::new();
    for (spec, svg) in [("0-0", &svgs[0].0), ("20-0", &svgs[0].1)] {
        let (f, _) = skip_context(&ex.features, spec.parse().unwrap());
        let label = label_name(predict(params, &f).map_err(|e| e.to_string())?.class);
        let text = String::from_utf8_lossy(svg);
        if !text.contains(&format!("context {spec} | predicted {label} |")) {
            return Err(format!("{spec} figure does not show prediction {label}"));
        }
        labels.push(format!("{spec} -> {label}"));
    }
    check(
        identical,
        format!("{utt}: two runs byte-identical: {identical}; {}", labels.join(", ")),
    )
}

fn main() {
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let mut report = |n: usize, name: &'static str, outcome: Outcome| {
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("{tag} [{n:>2}] {name}: {detail}");
        results.push((name, outcome));
    };
    report(1, "gradient integrity", gradient_integrity());
    report(2, "attention normalization", attention_normalization());
    report(3, "skip-rule oracle", skip_rule_oracle());
    report(4, "metric oracles", metric_oracles());

    let global = common::synth_data(CuePlacement::Global);
    let first = train_global(&global);
    match &first {
        Ok(first) => report(5, "learnability", learnability(&global, first)),
        Err(e) => report(5, "learnability", Err(e.clone())),
    }
    report(6, "context-sensitivity direction", context_direction());
    report(7, "SEGS% bookkeeping", segs_bookkeeping());
    report(8, "DSP oracles", dsp_oracles());
    report(9, "persistence", persistence());
    match &first {
        Ok((trained, _)) => report(10, "figure determinism", figure_determinism(&global, &trained.params)),
        Err(e) => report(10, "figure determinism", Err(e.clone())),
    }

    let failed = results.iter().filter(|(_, o)| o.is_err()).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
