use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::time::Instant;

use coupledflow::detector;
use coupledflow::eval::{
    account_block, accuracy, evaluate_sweep, gp_fit, sample_flow_masses, surprisingness, write_curve, FlowSize,
};
use coupledflow::ingest::{load_transactions, write_account_list, write_transactions, IngestConfig, RoleOverrides};
use coupledflow::metric::MetricParams;
use coupledflow::synth::{
    derive_seed, inject as inject_flow, random_background, read_truth, scaling_tensors, write_truth, BackgroundConfig,
    InjectionConfig, Sweep,
};
use coupledflow::tensor::{total_block_mass, AttrValue, CoupledTensors, ModeSchema, Role, RoleSets, TransferRecord};
use coupledflow::{Error, Result};

use crate::output::{
    io_error, render_bench, render_detect, render_surprise, render_sweep, write_out, BenchRow, DetectReport, FiberOut,
    RecordCounts, SurpriseReport,
};
use crate::{
    BackgroundArgs, BenchArgs, DetectArgs, IngestArgs, InjectArgs, InjectionArgs, SurpriseArgs, SweepArgs, SweepKind,
};

// Independent random streams derived from --seed.
const BACKGROUND_STREAM: u64 = 0;
const INJECTION_STREAM: u64 = 1;
const SAMPLING_STREAM: u64 = 2;
const BENCH_STREAM: u64 = 3;

fn ingest_config(a: &IngestArgs) -> Result<IngestConfig> {
    if !a.delimiter.is_ascii() {
        return Err(Error::InvalidParameter(format!(
            "delimiter {:?} is not ASCII",
            a.delimiter
        )));
    }
    let cfg = IngestConfig {
        time_bin_width: a.time_bin,
        time_origin: a.time_origin,
        role_ratio: a.role_ratio,
        extra_attr_columns: if a.time_only { Some(Vec::new()) } else { a.attrs.clone() },
        role_overrides: RoleOverrides {
            sources: a.sources.clone(),
            middles: a.middles.clone(),
            destinations: a.destinations.clone(),
        },
        delimiter: a.delimiter as u8,
        ..Default::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Records plus everything needed to write them back out.
struct Base {
    records: Vec<TransferRecord>,
    roles: RoleSets,
    schema: ModeSchema,
    domains: Vec<AttrValue>,
    attr_labels: Vec<Vec<String>>,
    time_origin: i64,
    time_bin_width: i64,
}

fn load_base(input: Option<&Path>, bg: &BackgroundArgs, ingest: &IngestArgs, seed: u64) -> Result<Base> {
    if let Some(path) = input {
        let ds = load_transactions(path, &ingest_config(ingest)?)?;
        let domains = ds.attr_domains();
        return Ok(Base {
            records: ds.records,
            roles: ds.roles,
            schema: ds.schema,
            domains,
            attr_labels: ds.attr_labels,
            time_origin: ds.time_origin,
            time_bin_width: ds.time_bin_width,
        });
    }
    let mut names = vec!["time_bin".to_string()];
    names.extend((1..=bg.background_attr_sizes.len()).map(|n| format!("attr{n}")));
    let mut domains = vec![bg.background_bins];
    domains.extend(&bg.background_attr_sizes);
    let cfg = BackgroundConfig {
        n_records: bg.background_records,
        n_sources: bg.background_sources,
        n_middles: bg.background_middles,
        n_destinations: bg.background_destinations,
        schema: ModeSchema::new(names)?,
        attr_domains: domains.clone(),
        seed: derive_seed(seed, BACKGROUND_STREAM),
        ..Default::default()
    };
    let b = random_background(&cfg)?;
    Ok(Base {
        records: b.records,
        roles: b.roles,
        attr_labels: vec![Vec::new(); b.schema.n_attrs()],
        schema: b.schema,
        domains,
        time_origin: 0,
        time_bin_width: ingest.time_bin,
    })
}

fn injection_config(a: &InjectionArgs, seed: u64) -> InjectionConfig {
    InjectionConfig {
        n_sources: a.n_x,
        n_middles: a.n_y,
        n_destinations: a.n_z,
        edge_prob: a.edge_prob,
        total_dirty_money: a.money,
        dirichlet_scale: a.dirichlet_scale,
        camouflage_max: a.camouflage_max,
        camouflage_cap_frac: a.camouflage_cap_frac,
        rng_seed: derive_seed(seed, INJECTION_STREAM),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| io_error(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| io_error(path, e))
}

fn fiber_out(t: &CoupledTensors, i: u32, labels: &[Vec<String>]) -> FiberOut {
    let key = t.fiber_key(i);
    let attributes = t
        .schema()
        .attribute_names()
        .iter()
        .zip(&key.attrs)
        .enumerate()
        .map(|(n, (name, &v))| {
            let value = labels
                .get(n)
                .and_then(|l| l.get(v as usize))
                .cloned()
                .unwrap_or_else(|| v.to_string());
            (name.clone(), value)
        })
        .collect::<BTreeMap<_, _>>();
    FiberOut {
        middle: key.middle,
        attributes,
    }
}

pub fn detect(a: DetectArgs) -> Result<()> {
    let params = MetricParams::new(a.alpha.alpha)?;
    let ds = load_transactions(&a.input, &ingest_config(&a.ingest)?)?;
    let t = CoupledTensors::build(&ds.records, &ds.roles, &ds.schema)?;
    let r = detector::detect(&t, &params)?;
    let accounts = r.accounts(&t);
    let evaluation = match &a.truth {
        Some(p) => Some(accuracy(&accounts, &read_truth(p)?)),
        None => None,
    };
    let build = t.report();
    let report = DetectReport {
        alpha: params.alpha(),
        score_algorithmic: r.score_algorithmic,
        score_exact: r.score_exact,
        iterations: r.iterations,
        priority_updates: r.priority_updates,
        block_mass: total_block_mass(&t, &r.block)?,
        sources: accounts.sources.into_iter().collect(),
        middles: accounts.middles.into_iter().collect(),
        destinations: accounts.destinations.into_iter().collect(),
        fibers: r
            .block
            .fibers
            .iter()
            .map(|&i| fiber_out(&t, i, &ds.attr_labels))
            .collect(),
        input: RecordCounts {
            data_lines: ds.report.data_lines,
            malformed: ds.report.malformed,
            records: build.records,
            p_records: build.p_records,
            q_records: build.q_records,
            dropped: build.dropped,
        },
        evaluation,
    };
    write_out(a.output.as_deref(), &render_detect(&report, a.format))
}

fn write_roles(dir: &Path, roles: &RoleSets) -> Result<()> {
    for (role, name) in [
        (Role::Source, "sources.txt"),
        (Role::Middle, "middles.txt"),
        (Role::Destination, "destinations.txt"),
    ] {
        let path = dir.join(name);
        write_account_list(create(&path)?, roles.get(role)).map_err(|e| io_error(&path, e))?;
    }
    Ok(())
}

pub fn inject(a: InjectArgs) -> Result<()> {
    let base = load_base(a.input.as_deref(), &a.background, &a.ingest, a.seed)?;
    let cfg = injection_config(&a.injection, a.seed);
    let inj = inject_flow(&base.records, &base.roles, &base.domains, &cfg)?;
    create_dir(&a.output)?;
    let data = a.output.join("transactions.csv");
    write_transactions(
        create(&data)?,
        &inj.records,
        &base.schema,
        base.time_origin,
        base.time_bin_width,
        &base.attr_labels,
    )?;
    let truth = a.output.join("truth.txt");
    write_truth(create(&truth)?, &inj.truth).map_err(|e| io_error(&truth, e))?;
    write_roles(&a.output, &base.roles)?;
    println!(
        "wrote {} records ({} injected) and {} labeled accounts to {}",
        inj.records.len(),
        inj.injected().len(),
        inj.truth.len(),
        a.output.display()
    );
    Ok(())
}

fn sweep_spec(kind: SweepKind, values: &[f64]) -> Result<Sweep> {
    match kind {
        SweepKind::Money => Ok(Sweep::Money(if values.is_empty() {
            (1..=10).map(|k| k as f64 * 1e6).collect()
        } else {
            values.to_vec()
        })),
        SweepKind::Accounts => {
            if values.is_empty() {
                return Ok(Sweep::AccountScale((1..=10).collect()));
            }
            values
                .iter()
                .map(|&v| {
                    if v >= 1.0 && v.fract() == 0.0 {
                        Ok(v as usize)
                    } else {
                        Err(Error::InvalidParameter(format!(
                            "account multiplier {v} is not a positive integer"
                        )))
                    }
                })
                .collect::<Result<_>>()
                .map(Sweep::AccountScale)
        }
    }
}

pub fn sweep(a: SweepArgs) -> Result<()> {
    let params = MetricParams::new(a.alpha.alpha)?;
    let spec = sweep_spec(a.sweep, &a.values)?;
    let base = load_base(a.input.as_deref(), &a.background, &a.ingest, a.seed)?;
    let cfg = injection_config(&a.injection, a.seed);
    let report = evaluate_sweep(
        &base.records,
        &base.roles,
        &base.schema,
        &base.domains,
        &cfg,
        &spec,
        &params,
    )?;
    create_dir(&a.output)?;
    let curve = a.output.join("curve.csv");
    let values: Vec<f64> = report.outcomes.iter().map(|o| o.sweep_value).collect();
    write_curve(create(&curve)?, &report.curve(), &values).map_err(|e| io_error(&curve, e))?;
    let rendered = render_sweep(&report, a.format);
    let summary = a.output.join(match a.format {
        crate::Format::Text => "summary.txt",
        crate::Format::Json => "summary.json",
    });
    write_out(Some(&summary), &rendered)?;
    print!("{rendered}");
    Ok(())
}

fn indices(t: &CoupledTensors, role: Role, ids: &BTreeSet<String>) -> Result<Vec<u32>> {
    ids.iter()
        .map(|id| {
            t.account_index(role, id)
                .ok_or_else(|| Error::Precondition(format!("{id} is not a {} account", role.label())))
        })
        .collect()
}

pub fn surprise(a: SurpriseArgs) -> Result<()> {
    let params = MetricParams::new(a.alpha.alpha)?;
    let ds = load_transactions(&a.input, &ingest_config(&a.ingest)?)?;
    let t = CoupledTensors::build(&ds.records, &ds.roles, &ds.schema)?;
    let accounts = match &a.block {
        Some(p) => read_truth(p)?,
        None => detector::detect(&t, &params)?.accounts(&t),
    };
    let size = FlowSize::of(&accounts);
    let block = account_block(
        &t,
        indices(&t, Role::Source, &accounts.sources)?.into_iter().collect(),
        &indices(&t, Role::Middle, &accounts.middles)?,
        indices(&t, Role::Destination, &accounts.destinations)?
            .into_iter()
            .collect(),
    );
    let observed = total_block_mass(&t, &block)?;
    let masses = sample_flow_masses(&t, size, a.samples, derive_seed(a.seed, SAMPLING_STREAM))?;
    let fit = gp_fit(&masses, a.epsilon)?;
    let report = SurpriseReport::new(
        observed,
        [size.sources, size.middles, size.destinations],
        &fit,
        surprisingness(&fit, observed),
    );
    write_out(a.output.as_deref(), &render_surprise(&report, a.format))
}

pub fn bench(a: BenchArgs) -> Result<()> {
    let params = MetricParams::new(a.alpha.alpha)?;
    if a.scales.is_empty() || a.repeats == 0 {
        return Err(Error::InvalidParameter("need at least one scale and one repeat".into()));
    }
    let mut rows = Vec::with_capacity(a.scales.len());
    for (i, &n) in a.scales.iter().enumerate() {
        let t = scaling_tensors(n, derive_seed(derive_seed(a.seed, BENCH_STREAM), i as u64))?;
        let mut best = f64::INFINITY;
        let mut iterations = 0;
        for _ in 0..a.repeats {
            let start = Instant::now();
            let r = detector::detect(&t, &params)?;
            best = best.min(start.elapsed().as_secs_f64());
            iterations = r.iterations;
        }
        rows.push(BenchRow {
            requested: n,
            entries: t.p_nnz() + t.q_nnz(),
            fibers: t.n_fibers(),
            iterations,
            seconds: best,
        });
    }
    write_out(a.output.as_deref(), &render_bench(&rows, a.format))
}
