use std::fs;
use std::io::{self, Write};
use std::path::Path;
use std::time::Instant;

use monocnn_core::codec::{self, size_report};
use monocnn_core::data::{evaluate, robustness_table, CorruptionGroup, CorruptionSpec, Dataset, Split};
use monocnn_core::model::FgfTemplate;
use monocnn_core::rng::{derive_seed, Xoshiro256StarStar};
use monocnn_core::train::ablation::{run_ablation, variants, AblationAxis, Variant, MAX_TERMS};
use monocnn_core::train::{
    check_fgf_derivatives, decode_checkpoint, encode_checkpoint, grad_check, GradCheckConfig, ParamGroup, Trainer,
};
use monocnn_core::transport::{fetch, serve, sha256, ModelStore};
use monocnn_core::{build, count_params, FgfKind, ModelState, Tensor};
use serde_json::{json, Value};

use crate::*;

const CHECKPOINT_MAGIC: &[u8] = b"MCKP";
const FGF_TOLERANCE: f64 = 1e-4;

pub fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Train(a) => train(a),
        Command::Export(a) => export(a),
        Command::Serve(a) => serve_dir(a),
        Command::Fetch(a) => fetch_packet(a),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => ablate(a),
        Command::SizeReport(a) => sizes(a),
        Command::GradCheck(a) => gradients(a),
    }
}

fn emit(record: Value) {
    let mut out = io::stdout().lock();
    let _ = writeln!(out, "{record}");
    let _ = out.flush();
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// A checkpoint or a MONO1 packet, told apart by magic.
fn load_model(path: &Path) -> Result<ModelState, CliError> {
    let bytes = read(path)?;
    let state = if bytes.starts_with(CHECKPOINT_MAGIC) {
        decode_checkpoint(&bytes)?.state
    } else {
        codec::decode(&bytes)?
    };
    Ok(state)
}

/// `<data-dir>/<dataset subdir>` when it exists, else `<data-dir>` itself.
fn load_split(args: &DataArgs, split: Split) -> Result<Dataset, CliError> {
    let nested = args.data_dir.join(args.dataset.subdir());
    let dir = if nested.is_dir() { nested } else { args.data_dir.clone() };
    let data = args.dataset.load(&dir, split)?;
    let limit = match split {
        Split::Train => args.train_limit,
        Split::Test => args.test_limit,
    };
    Ok(match limit {
        Some(n) => data.take(n),
        None => data,
    })
}

fn train(a: TrainArgs) -> Result<(), CliError> {
    let train = load_split(&a.data, Split::Train)?;
    let test = load_split(&a.data, Split::Test)?;
    let teacher = a.teacher.as_deref().map(load_model).transpose()?;
    let (mut state, mut trainer) = match &a.resume {
        Some(path) => {
            let c = decode_checkpoint(&read(path)?)?;
            (c.state, c.trainer)
        }
        None => {
            let desc = a.arch.descriptor(train.image_shape(), train.classes, &a.fgf.template(), a.seed);
            let state = build(&desc, a.seed)?;
            let trainer = Trainer::new(&state, a.optim.config(a.seed), a.loss.config(), train.len())?;
            (state, trainer)
        }
    };
    if let Some(path) = &a.save_initial {
        write(path, &encode_checkpoint(&state, &trainer)?)?;
    }
    let started = Instant::now();
    let mut train_loss = f64::NAN;
    while !trainer.finished() {
        let m = trainer.train_epoch(&mut state, teacher.as_ref(), &train)?;
        write(&a.out, &encode_checkpoint(&state, &trainer)?)?;
        train_loss = m.loss;
        emit(json!({
            "event": "epoch",
            "epoch": m.epoch,
            "loss": m.loss,
            "hard": m.terms.hard,
            "distill": m.terms.distill,
            "mse": m.terms.mse,
            "l2": m.terms.l2,
            "lr": m.lr,
            "train_top1": m.top1,
            "steps": m.steps,
            "seconds": started.elapsed().as_secs_f64(),
        }));
    }
    write(&a.out, &encode_checkpoint(&state, &trainer)?)?;
    let top1 = evaluate(&state, &test, None)?;
    emit(json!({
        "event": "done",
        "model": state.descriptor.name,
        "out": a.out.display().to_string(),
        "steps": trainer.step,
        "train_loss": train_loss,
        "test_top1": top1,
    }));
    Ok(())
}

fn export(a: ExportArgs) -> Result<(), CliError> {
    let state = load_model(&a.checkpoint)?;
    let state = if a.full { state.materialize() } else { state };
    let packet = codec::encode(&state)?;
    write(&a.out, &packet)?;
    emit(json!({
        "event": "exported",
        "model": state.descriptor.name,
        "out": a.out.display().to_string(),
        "bytes": packet.len(),
        "sha256": hex(&sha256(&packet)),
    }));
    Ok(())
}

fn serve_dir(a: ServeArgs) -> Result<(), CliError> {
    let store = ModelStore::load_dir(&a.model_dir).map_err(|e| match e {
        monocnn_core::Error::Io(source) => CliError::Io {
            path: a.model_dir.clone(),
            source,
        },
        other => other.into(),
    })?;
    if store.is_empty() {
        return Err(CliError::Usage(format!("no .mono1 packets in {}", a.model_dir.display())));
    }
    let models: Vec<Value> = store
        .iter()
        .map(|m| json!({ "name": m.name, "version": m.version, "bytes": m.packet.len() }))
        .collect();
    let server = serve(a.bind.as_str(), store)?;
    emit(json!({ "event": "listening", "addr": server.local_addr().to_string(), "models": models }));
    server.wait();
    Ok(())
}

fn fetch_packet(a: FetchArgs) -> Result<(), CliError> {
    let got = fetch(a.addr.as_str(), &a.model, a.version)?;
    write(&a.out, &got.packet)?;
    emit(json!({
        "event": "fetched",
        "model": got.manifest.name,
        "version": got.manifest.version,
        "packet_bytes": got.manifest.packet_bytes,
        "sha256": got.manifest.sha256_hex(),
        "wire_bytes_sent": got.wire.bytes_sent,
        "wire_bytes_received": got.wire.bytes_received,
        "model_frame_bytes": got.wire.model_frame_bytes,
        "out": a.out.display().to_string(),
    }));
    Ok(())
}

fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

fn eval(a: EvalArgs) -> Result<(), CliError> {
    let state = load_model(&a.model)?;
    let test = load_split(&a.data, Split::Test)?;
    match a.corrupt.as_deref() {
        None => {
            let top1 = evaluate(&state, &test, None)?;
            if a.json {
                emit(json!({ "corruption": "none", "top1": top1 }));
            } else {
                println!("clean top1 {}", pct(top1));
            }
        }
        Some("all") => robustness(&state, &test, a.seed, a.json)?,
        Some(spec) => {
            let spec = CorruptionSpec {
                seed: a.seed,
                ..spec.parse::<CorruptionSpec>()?
            };
            let top1 = evaluate(&state, &test, Some(&spec))?;
            let label = format!("{}:{}", spec.kind, spec.severity);
            if a.json {
                emit(json!({ "corruption": label, "top1": top1 }));
            } else {
                println!("{label} top1 {}", pct(top1));
            }
        }
    }
    Ok(())
}

/// Every kind at every severity, then clean, per-group and overall means.
fn robustness(state: &ModelState, test: &Dataset, seed: u64, as_json: bool) -> Result<(), CliError> {
    let clean = evaluate(state, test, None)?;
    let rows = robustness_table(state, test, seed)?;
    let group_mean = |g: CorruptionGroup| {
        let means: Vec<f64> = rows.iter().filter(|r| r.group == g).map(|r| r.mean).collect();
        means.iter().sum::<f64>() / means.len() as f64
    };
    let overall = rows.iter().map(|r| r.mean).sum::<f64>() / rows.len() as f64;
    if as_json {
        for r in &rows {
            emit(json!({
                "kind": r.kind.name(),
                "group": r.group.name(),
                "by_severity": r.by_severity,
                "mean": r.mean,
            }));
        }
        let mut summary = json!({ "clean": clean, "mean": overall });
        for g in CorruptionGroup::ALL {
            summary[g.name()] = json!(group_mean(g));
        }
        emit(summary);
        return Ok(());
    }
    let mut out = io::stdout().lock();
    let _ = writeln!(
        out,
        "{:<12} {:<8} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6}",
        "corruption", "group", "s1", "s2", "s3", "s4", "s5", "mean"
    );
    for r in &rows {
        let s: Vec<String> = r.by_severity.iter().map(|&v| format!("{:>6}", pct(v))).collect();
        let _ = writeln!(out, "{:<12} {:<8} {} {:>6}", r.kind.name(), r.group.name(), s.join(" "), pct(r.mean));
    }
    let _ = writeln!(out);
    let mut head = format!("{:>7}", "clean");
    let mut vals = format!("{:>7}", pct(clean));
    for g in CorruptionGroup::ALL {
        head += &format!(" {:>8}", g.name());
        vals += &format!(" {:>8}", pct(group_mean(g)));
    }
    let _ = writeln!(out, "{head} {:>7}", "mean");
    let _ = writeln!(out, "{vals} {:>7}", pct(overall));
    Ok(())
}

fn parse_terms(s: &str) -> Result<Vec<usize>, CliError> {
    let bad = || CliError::Usage(format!("bad term counts {s:?} (e.g. 1,2,4 or 1-6 or all)"));
    let counts: Vec<usize> = if s == "all" {
        (1..=MAX_TERMS).collect()
    } else if let Some((lo, hi)) = s.split_once('-') {
        let (lo, hi): (usize, usize) = (lo.trim().parse().map_err(|_| bad())?, hi.trim().parse().map_err(|_| bad())?);
        (lo..=hi).collect()
    } else {
        s.split(',').map(|t| t.trim().parse().map_err(|_| bad())).collect::<Result<_, _>>()?
    };
    if counts.is_empty() || counts.iter().any(|&t| t == 0 || t > MAX_TERMS) {
        return Err(CliError::Usage(format!("term counts must lie in 1..={MAX_TERMS}, got {s:?}")));
    }
    Ok(counts)
}

fn ablation_variants(a: &AblateArgs) -> Result<Vec<Variant>, CliError> {
    let axes = [a.fgf.is_some(), a.beta_grid, a.terms.is_some()];
    if axes.iter().filter(|&&on| on).count() != 1 {
        return Err(CliError::Usage("give exactly one of --fgf, --beta-grid, --terms".into()));
    }
    let base = FgfTemplate::default();
    if let Some(kinds) = &a.fgf {
        if kinds == "all" {
            return Ok(variants(AblationAxis::Fgf, base));
        }
        return kinds
            .split(',')
            .map(|k| {
                let kind: FgfKind = k.trim().parse()?;
                Ok(Variant {
                    label: kind.name().to_string(),
                    template: FgfTemplate { kind, ..base },
                })
            })
            .collect();
    }
    if a.beta_grid {
        return Ok(variants(AblationAxis::Beta, base));
    }
    let counts = parse_terms(a.terms.as_deref().unwrap_or_default())?;
    Ok(counts
        .into_iter()
        .map(|terms| Variant {
            label: format!("terms={terms}"),
            template: FgfTemplate { terms, ..base },
        })
        .collect())
}

fn ablate(a: AblateArgs) -> Result<(), CliError> {
    let variants = ablation_variants(&a)?;
    if a.runs == 0 {
        return Err(CliError::Usage("--runs must be at least 1".into()));
    }
    let train = load_split(&a.data, Split::Train)?;
    let test = load_split(&a.data, Split::Test)?;
    let seeds: Vec<u64> = (0..a.runs).map(|r| a.seed + r).collect();
    let records = run_ablation(
        &variants,
        &seeds,
        &train,
        &test,
        a.optim.config(a.seed),
        a.loss.config(),
        |r| emit(serde_json::to_value(r).unwrap_or(Value::Null)),
    )?;

    let mut err = io::stderr().lock();
    let _ = writeln!(err, "{:<22} {:>5} {:>8} {:>8} {:>8}", "variant", "runs", "mean", "min", "max");
    for v in &variants {
        let top: Vec<f64> = records.iter().filter(|r| r.label == v.label).map(|r| r.top1).collect();
        let mean = top.iter().sum::<f64>() / top.len() as f64;
        let (lo, hi) = top.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &t| (l.min(t), h.max(t)));
        let _ = writeln!(err, "{:<22} {:>5} {:>8} {:>8} {:>8}", v.label, top.len(), pct(mean), pct(lo), pct(hi));
    }
    Ok(())
}

fn sizes(a: SizeReportArgs) -> Result<(), CliError> {
    let (desc, file_bytes) = match &a.model {
        Some(path) => (load_model(path)?.descriptor, Some(read(path)?.len())),
        None => (a.arch.descriptor(a.input_shape, a.classes, &a.fgf.template(), a.seed), None),
    };
    let report = size_report(&desc)?;
    let count = count_params(&desc)?;
    let mut record = json!({
        "model": desc.name,
        "mono_bytes": report.mono_bytes,
        "full_bytes": report.full_bytes,
        "ratio": report.ratio,
        "conv_mono_bytes": report.conv_mono_bytes,
        "conv_full_bytes": report.conv_full_bytes,
        "conv_ratio": report.conv_ratio,
        "learnable_params": count.learnable,
        "effective_params": count.effective,
        "tau": count.tau,
    });
    if let Some(n) = file_bytes {
        record["file_bytes"] = json!(n);
    }
    emit(record);
    Ok(())
}

fn gradients(a: GradCheckArgs) -> Result<(), CliError> {
    let fgf = check_fgf_derivatives();
    let mut fgf_worst = 0f64;
    for c in &fgf {
        fgf_worst = fgf_worst.max(c.max_rel_error);
        emit(json!({
            "event": "fgf",
            "kind": c.kind.name(),
            "points": c.points,
            "max_rel_error": c.max_rel_error,
            "tolerance": FGF_TOLERANCE,
            "pass": c.max_rel_error < FGF_TOLERANCE,
        }));
    }

    let mut rng = Xoshiro256StarStar::seed_from_u64(derive_seed(a.seed, 2));
    let n = a.samples.max(1);
    let (x, labels, shape, classes) = if a.synthetic {
        let shape = [1, 28, 28];
        let len = n * shape.iter().product::<usize>();
        let x = Tensor::from_vec(&[n, 1, 28, 28], (0..len).map(|_| rng.normal() as f32).collect())?;
        let labels: Vec<usize> = (0..n).map(|_| rng.below(10)).collect();
        (x, labels, shape, 10)
    } else {
        let test = load_split(&a.data, Split::Test)?;
        let picks: Vec<usize> = (0..n).map(|_| rng.below(test.len())).collect();
        let chosen = test.select(&picks);
        let x = test.stats.apply(&chosen.images);
        let labels: Vec<usize> = chosen.labels.iter().map(|&l| l as usize).collect();
        (x, labels, test.image_shape(), test.classes)
    };
    let desc = a.arch.descriptor(shape, classes, &a.fgf.template(), a.seed);
    let mut state = build(&desc, a.seed)?;
    state.init_head(derive_seed(a.seed, 1));
    let cfg = GradCheckConfig {
        seed: a.seed,
        ..GradCheckConfig::default()
    };
    let report = grad_check(&state, None, &x, &labels, &cfg)?;
    for t in &report.tensors {
        emit(json!({
            "event": "tensor",
            "name": t.name,
            "group": format!("{:?}", t.group).to_lowercase(),
            "probes": t.probes,
            "kinks": t.kinks,
            "near_zero": t.near_zero,
            "max_rel_error": t.max_rel_error,
            "tolerance": t.tolerance,
            "pass": t.pass,
        }));
    }
    let pass = report.pass && fgf_worst < FGF_TOLERANCE;
    emit(json!({
        "event": "summary",
        "arch": a.arch.to_string(),
        "fgf_max_rel_error": fgf_worst,
        "seed_max_rel_error": report.max_error(ParamGroup::Seed),
        "conv_max_rel_error": report.max_error(ParamGroup::Conv),
        "dense_max_rel_error": report.max_error(ParamGroup::Dense),
        "pass": pass,
    }));
    if !pass {
        return Err(CliError::CheckFailed("gradients disagree with central differences".into()));
    }
    Ok(())
}
