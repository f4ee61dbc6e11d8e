use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use log::info;
use serde::Serialize;
use serde_json::json;

use flowlens::apps::autoscale::{
    linreg_training_scenario, run_autoscaler, step_load_scenario, train_linreg_predictor, write_timeline_csv, AutoscaleConfig,
    AutoscaleScenario, Predictor,
};
use flowlens::apps::classify::{
    classify, read_truth_csv, synthetic_corpus, write_labels_csv, ClassMethod, ClassifyConfig, CorpusSpec,
};
use flowlens::apps::extract::{extract_trace, ExtractConfig};
use flowlens::apps::features::FeatureMatrix;
use flowlens::apps::lb::{hetero_bench_spec, run_lb_bench, write_fct_csv, LbPolicy};
use flowlens::store::{stress_exchange, Counter, RegionConfig, Signal, VipRegion};
use flowlens::traffic::{fnv1a64, gen_trace, write_trace, FlowProfile, WorkloadSpec};

use crate::manifest::{beside, RunManifest, ARTIFACT_VERSION, SCHEMA_VERSION};
use crate::{
    read_json, usage, AutoscaleArgs, ClassifyArgs, Cmd, CorpusArgs, ExtractArgs, GenArgs, LbsimArgs, PredictorArg,
    ProfileArg, RerunArgs, ShmDumpArgs,
};

/// Seed offset of the run the regression predictor is trained on, so
/// training never sees the evaluated arrivals.
const TRAIN_SEED_OFFSET: u64 = 1_000_003;
const TRAIN_FRAC: f64 = 0.7;

pub fn run(cmd: Cmd) -> anyhow::Result<()> {
    match cmd {
        Cmd::Gen(a) => gen(&a),
        Cmd::Corpus(a) => corpus(&a),
        Cmd::Extract(a) => extract(&a),
        Cmd::Classify(a) => classify_cmd(&a),
        Cmd::Autoscale(a) => autoscale(&a),
        Cmd::Lbsim(a) => lbsim(&a),
        Cmd::ShmDump(a) => shm_dump(&a),
        Cmd::Rerun(a) => rerun(&a),
    }
}

fn manifest(cmd: Cmd, seed: Option<u64>, inputs: Vec<PathBuf>, outputs: Vec<PathBuf>) -> anyhow::Result<RunManifest> {
    let value = serde_json::to_value(&cmd)?;
    Ok(RunManifest {
        schema_version: SCHEMA_VERSION,
        artifact_version: ARTIFACT_VERSION.to_string(),
        command: cmd.name().to_string(),
        config: value["config"].clone(),
        seed,
        inputs,
        outputs,
    })
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn open(path: &Path) -> anyhow::Result<File> {
    File::open(path).with_context(|| format!("opening {}", path.display()))
}

fn workload_from(a: &GenArgs) -> anyhow::Result<WorkloadSpec> {
    if let Some(p) = &a.workload {
        let mut spec: WorkloadSpec = read_json(p)?;
        spec.seed = a.seed;
        return Ok(spec);
    }
    let caps = if a.capacities.is_empty() {
        vec![1.0; a.servers]
    } else if a.capacities.len() == a.servers {
        a.capacities.clone()
    } else {
        return Err(usage(format!(
            "--capacities lists {} values for {} servers",
            a.capacities.len(),
            a.servers
        )));
    };
    let mut spec = WorkloadSpec::new(a.rate, a.duration, caps, a.seed);
    spec.server_cores = a.cores.clone();
    spec.flood_rate = a.flood_rate;
    spec.mean_duration = a.mean_work;
    spec.profile = match a.profile {
        ProfileArg::Exponential => FlowProfile::Exponential,
        ProfileArg::FixedFiles => FlowProfile::FixedFiles,
        ProfileArg::Mixture => FlowProfile::Mixture,
    };
    Ok(spec)
}

fn gen(a: &GenArgs) -> anyhow::Result<()> {
    let spec = workload_from(a)?;
    spec.validate()?;
    let events = gen_trace(&spec)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_trace(&events, &a.out)?;
    info!("wrote {} packets to {}", events.len(), a.out.display());
    println!("{} packets", events.len());
    manifest(Cmd::Gen(a.clone()), Some(a.seed), a.workload.iter().cloned().collect(), vec![a.out.clone()])?
        .write(&beside(&a.out))
}

fn corpus(a: &CorpusArgs) -> anyhow::Result<()> {
    let spec = CorpusSpec {
        seed: a.seed,
        ..CorpusSpec::default()
    };
    let (fm, truth) = synthetic_corpus(&spec)?;
    let features = a.out_dir.join("features.csv");
    let truth_path = a.out_dir.join("truth.csv");
    let mut w = create(&features)?;
    fm.write_csv(&mut w)?;
    w.flush()?;
    let mut w = csv::Writer::from_writer(create(&truth_path)?);
    w.write_record(["truth"])?;
    for t in &truth {
        w.write_record([t.to_string()])?;
    }
    w.flush()?;
    println!("{} rows", truth.len());
    manifest(Cmd::Corpus(a.clone()), Some(a.seed), vec![], vec![features, truth_path])?
        .write(&a.out_dir.join("manifest.json"))
}

fn parse_signals(names: &[String]) -> anyhow::Result<Vec<Signal>> {
    if names.is_empty() {
        return Ok(Signal::ALL.to_vec());
    }
    let mut out: Vec<Signal> = names
        .iter()
        .map(|n| n.trim().parse::<Signal>().map_err(usage))
        .collect::<Result<_, _>>()?;
    out.sort();
    out.dedup();
    Ok(out)
}

fn features_path(a: &ExtractArgs) -> PathBuf {
    a.features_out.clone().unwrap_or_else(|| {
        let mut name = a.region.file_name().unwrap_or_default().to_os_string();
        name.push(".features.csv");
        a.region.with_file_name(name)
    })
}

fn extract(a: &ExtractArgs) -> anyhow::Result<()> {
    let signals = parse_signals(&a.signals)?;
    let events = flowlens::traffic::load_trace(&a.trace)?;
    if let Some(dir) = a.region.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let region = VipRegion::create(
        RegionConfig {
            n_egress: a.n_egress,
            ..RegionConfig::default()
        },
        &a.region,
    )?;
    let cfg = ExtractConfig {
        window: a.window,
        seed: a.seed,
        ..ExtractConfig::default()
    };
    let report = extract_trace(&events, &region, &cfg, &signals)?;
    region.flush()?;
    let out = features_path(a);
    let mut w = create(&out)?;
    report.features.write_csv(&mut w)?;
    w.flush()?;
    let total: u64 = region
        .active_egresses()
        .iter()
        .map(|&i| region.read_latest(i, 0.0).map(|f| u64::from(f.counter(Counter::FlowTotal))))
        .sum::<Result<u64, _>>()?;
    println!(
        "{} packets, {} rows, {} flows, {} table misses, {} dropped emissions",
        events.len(),
        report.features.x.nrows(),
        total,
        report.misses,
        report.dropped
    );
    manifest(Cmd::Extract(a.clone()), Some(a.seed), vec![a.trace.clone()], vec![a.region.clone(), out])?
        .write(&beside(&a.region))
}

fn classify_cmd(a: &ClassifyArgs) -> anyhow::Result<()> {
    let mut method: ClassMethod = a.method.parse()?;
    if let ClassMethod::Dbscan { eps, min_pts } = &mut method {
        if !(a.eps > 0.0 && a.eps.is_finite()) {
            return Err(usage(format!("--eps must be > 0, got {}", a.eps)));
        }
        if a.min_pts == 0 {
            return Err(usage("--min-pts must be >= 1"));
        }
        *eps = a.eps;
        *min_pts = a.min_pts;
    }
    if a.components == 0 {
        return Err(usage("--components must be >= 1"));
    }
    let fm = FeatureMatrix::read_csv(open(&a.features)?)?;
    let truth = match &a.labels {
        Some(p) => Some(read_truth_csv(open(p)?)?),
        None => None,
    };
    let cfg = ClassifyConfig {
        n_components: a.components,
        ..ClassifyConfig::new(method, a.seed)
    };
    let report = classify(&fm, &cfg, truth.as_deref())?;
    let mut w = create(&a.out)?;
    write_labels_csv(&fm.keys, &report.labels, truth.as_deref(), &mut w)?;
    w.flush()?;

    let clusters: Vec<_> = report
        .profiles
        .iter()
        .map(|p| json!({"label": p.label, "size": p.size, "dominant": p.dominant(&fm.col_names, 5)}))
        .collect();
    let mut summary_path = a.out.file_name().unwrap_or_default().to_os_string();
    summary_path.push(".summary.json");
    let summary_path = a.out.with_file_name(summary_path);
    write_json(
        &summary_path,
        &json!({
            "schema_version": SCHEMA_VERSION,
            "artifact_version": ARTIFACT_VERSION,
            "method": report.method,
            "rows": report.labels.len(),
            "n_clusters": report.n_clusters,
            "n_noise": report.n_noise,
            "ari": report.ari,
            "explained_variance_ratio": report.explained_variance_ratio,
            "clusters": clusters,
        }),
    )?;
    match report.ari {
        Some(ari) => println!("{}: {} clusters, {} noise, ARI {ari:.4}", report.method, report.n_clusters, report.n_noise),
        None => println!("{}: {} clusters, {} noise", report.method, report.n_clusters, report.n_noise),
    }
    let mut inputs = vec![a.features.clone()];
    inputs.extend(a.labels.iter().cloned());
    manifest(Cmd::Classify(a.clone()), Some(a.seed), inputs, vec![a.out.clone(), summary_path])?
        .write(&beside(&a.out))
}

fn autoscale(a: &AutoscaleArgs) -> anyhow::Result<()> {
    let scenario: AutoscaleScenario = match &a.workload {
        Some(p) => {
            let mut s: AutoscaleScenario = read_json(p)?;
            s.workload.seed = a.seed;
            s
        }
        None => step_load_scenario(a.seed),
    };
    scenario.workload.validate()?;
    let cfg: AutoscaleConfig = match &a.cfg {
        Some(p) => read_json(p)?,
        None => AutoscaleConfig::default(),
    };
    cfg.validate()?;
    let mut extra = serde_json::Map::new();
    let predictor = match a.predictor {
        PredictorArg::Oracle => Predictor::Oracle,
        PredictorArg::Reactive => Predictor::Reactive,
        PredictorArg::Linreg => {
            let train = linreg_training_scenario(a.seed.wrapping_add(TRAIN_SEED_OFFSET));
            let p = train_linreg_predictor(&train, &cfg, a.lookback, TRAIN_FRAC)?;
            info!("regression predictor: holdout R^2 {:.3}", p.holdout_r2);
            extra.insert("holdout_r2".into(), json!(p.holdout_r2));
            Predictor::Linreg(p)
        }
    };
    let run = run_autoscaler(&scenario, &predictor, &cfg)?;
    let timeline = a.out_dir.join("timeline.csv");
    let summary_path = a.out_dir.join("summary.json");
    let mut w = create(&timeline)?;
    write_timeline_csv(&run.timeline, &mut w)?;
    w.flush()?;
    let mut summary = serde_json::to_value(&run.summary)?;
    if let Some(obj) = summary.as_object_mut() {
        obj.insert("schema_version".into(), json!(SCHEMA_VERSION));
        obj.insert("artifact_version".into(), json!(ARTIFACT_VERSION));
        obj.extend(extra);
    }
    write_json(&summary_path, &summary)?;
    let s = &run.summary;
    println!(
        "{}: {} events ({} up, {} down), {:.1} server-seconds, {:.1}% of steady steps in band",
        s.predictor,
        s.events,
        s.ups,
        s.downs,
        s.server_seconds,
        100.0 * s.steady_in_band_frac
    );
    let mut inputs: Vec<PathBuf> = a.workload.iter().cloned().collect();
    inputs.extend(a.cfg.iter().cloned());
    manifest(Cmd::Autoscale(a.clone()), Some(a.seed), inputs, vec![timeline, summary_path])?
        .write(&a.out_dir.join("manifest.json"))
}

fn lbsim(a: &LbsimArgs) -> anyhow::Result<()> {
    let policies: Vec<LbPolicy> = a.policies.iter().map(|p| p.trim().parse()).collect::<Result<_, _>>()?;
    if policies.is_empty() {
        return Err(usage("--policies is empty"));
    }
    let spec = match &a.workload {
        Some(p) => {
            let mut s: WorkloadSpec = read_json(p)?;
            s.seed = a.seed;
            s
        }
        None => hetero_bench_spec(a.seed),
    };
    spec.validate()?;
    let runs = run_lb_bench(&policies, &spec)?;
    let mut outputs = Vec::new();
    for r in &runs {
        let path = a.out_dir.join(format!("fct_{}.csv", r.summary.policy));
        let mut w = create(&path)?;
        write_fct_csv(&r.records, &mut w)?;
        w.flush()?;
        outputs.push(path);
        let s = &r.summary;
        println!(
            "{:6} mean {:.4} p90 {:.4} p95 {:.4} tasks {:?}",
            s.policy, s.mean_fct, s.p90_fct, s.p95_fct, s.tasks
        );
    }
    let summary_path = a.out_dir.join("summary.json");
    let policies: Vec<_> = runs.iter().map(|r| &r.summary).collect();
    write_json(
        &summary_path,
        &json!({
            "schema_version": SCHEMA_VERSION,
            "artifact_version": ARTIFACT_VERSION,
            "seed": a.seed,
            "policies": policies,
        }),
    )?;
    outputs.push(summary_path);
    manifest(Cmd::Lbsim(a.clone()), Some(a.seed), a.workload.iter().cloned().collect(), outputs)?
        .write(&a.out_dir.join("manifest.json"))
}

fn shm_dump(a: &ShmDumpArgs) -> anyhow::Result<()> {
    let region = VipRegion::open(&a.region)?;
    let cfg = *region.config();
    if let Some(n) = a.stress_io {
        let egress = match a.egress {
            Some(e) if e < cfg.n_egress => e,
            Some(e) => return Err(usage(format!("--egress {e} out of range (N = {})", cfg.n_egress))),
            None => (0..cfg.n_egress)
                .rev()
                .find(|&i| !region.is_active(i))
                .ok_or_else(|| usage("no inactive egress to stress; pass --egress"))?,
        };
        let was_active = region.is_active(egress);
        let report = stress_exchange(&region, egress, n)?;
        if !was_active {
            region.remove_egress(egress)?;
        }
        region.flush()?;
        println!("{}", serde_json::to_string_pretty(&json!({"egress": egress, "report": report}))?);
        if !report.clean() {
            anyhow::bail!("{} torn frames, {} seq regressions", report.torn, report.seq_regressions);
        }
        return Ok(());
    }

    let out = std::io::stdout();
    let mut out = out.lock();
    writeln!(out, "region {}", a.region.display())?;
    writeln!(
        out,
        "n_egress {} n_counters {} n_signals {} k {} m {} n_action_slots {} bytes {}",
        cfg.n_egress,
        cfg.n_counters,
        cfg.n_signals,
        cfg.k,
        cfg.m,
        cfg.n_action_slots,
        cfg.layout_size()
    )?;
    let words: Vec<String> = region.bit_index().iter().map(|w| format!("{w:016x}")).collect();
    writeln!(out, "bit_index {}", words.join(" "))?;
    let active = region.active_egresses();
    writeln!(out, "active {active:?}")?;
    for i in active {
        let f = region.read_latest(i, 0.0)?;
        writeln!(out, "egress {i}")?;
        writeln!(out, "  counter_seqs {:?} action_seqs {:?}", region.counter_seqs(i), region.action_seqs(i))?;
        let counters: Vec<String> = Counter::ALL
            .iter()
            .zip(&f.counters)
            .map(|(c, v)| format!("{}={v}", c.name()))
            .collect();
        writeln!(out, "  counters seq {} {}", f.seq, counters.join(" "))?;
        writeln!(out, "  action weight {:.4}", region.read_action(i)?.weight_f64())?;
        for (s, samples) in Signal::ALL.iter().zip(&f.samples) {
            let filled = samples.iter().filter(|x| !x.is_empty()).count();
            let bytes: Vec<u8> = samples.iter().flat_map(|x| x.to_le_bytes()).collect();
            writeln!(out, "  {:28} filled {filled:4} digest {:016x}", s.name(), fnv1a64(&bytes))?;
        }
    }
    Ok(())
}

/// Points every output of `cmd` into `dir`, keeping file names.
fn retarget(cmd: &mut Cmd, dir: &Path) -> anyhow::Result<()> {
    let moved = |p: &Path| dir.join(p.file_name().unwrap_or_default());
    match cmd {
        Cmd::Gen(a) => a.out = moved(&a.out),
        Cmd::Corpus(a) => a.out_dir = dir.to_path_buf(),
        Cmd::Extract(a) => {
            let features = features_path(a);
            a.region = moved(&a.region);
            a.features_out = Some(moved(&features));
        }
        Cmd::Classify(a) => a.out = moved(&a.out),
        Cmd::Autoscale(a) => a.out_dir = dir.to_path_buf(),
        Cmd::Lbsim(a) => a.out_dir = dir.to_path_buf(),
        Cmd::ShmDump(_) => {}
        Cmd::Rerun(_) => return Err(usage("a manifest cannot record a rerun")),
    }
    Ok(())
}

fn rerun(a: &RerunArgs) -> anyhow::Result<()> {
    let m = RunManifest::read(&a.manifest)?;
    let mut cmd: Cmd = serde_json::from_value(json!({"command": m.command, "config": m.config}))
        .map_err(|e| usage(format!("manifest {}: {e}", a.manifest.display())))?;
    if matches!(cmd, Cmd::Rerun(_)) {
        return Err(usage("a manifest cannot record a rerun"));
    }
    if let Some(dir) = &a.out_dir {
        fs::create_dir_all(dir)?;
        retarget(&mut cmd, dir)?;
    }
    info!("rerunning {}", cmd.name());
    run(cmd)
}
