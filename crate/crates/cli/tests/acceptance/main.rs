//! Acceptance criteria, one PASS or FAIL line each. Criterion numbers given
//! as arguments select a subset.

mod gp_oracle;
mod oracle;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use coupledflow::detector::{detect, detect_with, peel_trace, DetectOptions};
use coupledflow::eval::{
    account_block, evaluate_sweep, gp_fit, sample_flow_masses, surprisingness, FlowSize, SweepReport,
};
use coupledflow::gp::fit_exceedances;
use coupledflow::metric::{fiber_stats, score_block, MetricParams};
use coupledflow::synth::{
    derive_seed, inject, random_background, scaling_tensors, Background, BackgroundConfig, Injection, InjectionConfig,
    Sweep,
};
use coupledflow::tensor::{
    total_block_mass, CoupledTensors, FiberKey, FlowBlock, ModeSchema, Role, RoleSets, TransferRecord,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal};

type Check = Result<String, String>;

struct Criterion {
    id: u32,
    name: &'static str,
    limit: Option<Duration>,
    run: fn() -> Check,
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// Master seed of every randomized criterion; streams match the CLI's.
const SEED: u64 = 0;
const ALPHA: f64 = 0.8;

fn rel_err(got: f64, want: f64) -> f64 {
    let scale = got.abs().max(want.abs());
    if scale == 0.0 {
        0.0
    } else {
        (got - want).abs() / scale
    }
}

fn metric_identities() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mass = |rng: &mut ChaCha8Rng| {
        if rng.random_bool(0.05) {
            0.0
        } else {
            10f64.powf(rng.random_range(-3.0..9.0))
        }
    };
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let (a, b) = (mass(&mut rng), mass(&mut rng));
        let alpha = rng.random_range(0.0..=1.0);
        let s = fiber_stats(a, b).map_err(err)?;
        worst = worst.max(rel_err(s.balanced_form(alpha), s.weight(alpha)));
    }
    ensure(worst <= 1e-9, || {
        format!("numerator forms differ by {worst:e} relative")
    })?;

    let mut worst_g = 0.0f64;
    let mut blocks = 0;
    for seed in 0..100 {
        let inst = oracle::random_instance(3000 + seed, 60, 1 + (seed % 2) as usize, false);
        let t = CoupledTensors::build(&inst.records, &inst.roles, &inst.schema).map_err(err)?;
        let params = MetricParams::new(ALPHA).map_err(err)?;
        let detected = detect(&t, &params).map_err(err)?;
        let candidates = [detected.block.clone(), FlowBlock::full(&t)];
        for c in [1e-3, 1.0, 1e6] {
            let scaled: Vec<TransferRecord> = inst
                .records
                .iter()
                .map(|r| TransferRecord {
                    amount: r.amount * c,
                    ..r.clone()
                })
                .collect();
            let u = CoupledTensors::build(&scaled, &inst.roles, &inst.schema).map_err(err)?;
            for b in &candidates {
                let s0 = score_block(&t, b, &params).map_err(err)?;
                let s1 = score_block(&u, b, &params).map_err(err)?;
                worst_g = worst_g
                    .max(rel_err(s1.algorithmic(), c * s0.algorithmic()))
                    .max(rel_err(s1.exact(), c * s0.exact()));
                blocks += 1;
            }
            let r = detect(&u, &params).map_err(err)?;
            ensure(r.block == detected.block, || {
                format!("instance {seed}: detected block changes under scaling by {c}")
            })?;
        }
    }
    ensure(worst_g <= 1e-9, || {
        format!("scores scale with relative error {worst_g:e}")
    })?;
    Ok(format!(
        "10000 triples, worst {worst:.1e}; {blocks} scaled blocks, worst {worst_g:.1e}"
    ))
}

fn oracle_equivalence() -> Check {
    let alphas = [0.5, 0.625, 0.75, 0.875];
    let mut checked = 0;
    let mut seed = 0;
    while checked < 100 {
        seed += 1;
        let inst = oracle::random_instance(seed, 50, 1 + (seed % 2) as usize, true);
        let t = CoupledTensors::build(&inst.records, &inst.roles, &inst.schema).map_err(err)?;
        if t.n_sources() + t.n_fibers() + t.n_destinations() > 50 {
            continue;
        }
        let alpha = alphas[seed as usize % alphas.len()];
        let params = MetricParams::new(alpha).map_err(err)?;
        let naive = oracle::naive_greedy(&inst, alpha);
        let got = detect_with(
            &t,
            &params,
            DetectOptions {
                keep_peel_order: true,
                ..Default::default()
            },
        )
        .map_err(err)?;
        ensure(got.score_algorithmic == naive.best, || {
            format!("seed {seed}: score {} vs oracle {}", got.score_algorithmic, naive.best)
        })?;
        ensure(got.peel_order.as_deref() == Some(naive.order.as_slice()), || {
            format!("seed {seed}: peel order differs")
        })?;
        let accounts = got.accounts(&t);
        let fibers: BTreeSet<oracle::Key> = got
            .block
            .fiber_keys(&t)
            .into_iter()
            .map(|FiberKey { middle, attrs }| (middle, attrs))
            .collect();
        ensure(
            accounts.sources == naive.sources && accounts.destinations == naive.destinations && fibers == naive.fibers,
            || format!("seed {seed}: best block differs"),
        )?;
        let scores: Vec<f64> = peel_trace(&t, &params).iter().map(|s| s.score).collect();
        ensure(scores == naive.scores, || format!("seed {seed}: score trace differs"))?;
        checked += 1;
    }
    Ok(format!("100 instances exact (seeds 1..={seed})"))
}

fn background(extra_attrs: &[u32]) -> Result<Background, String> {
    let mut names = vec!["time_bin".to_string()];
    names.extend((1..=extra_attrs.len()).map(|n| format!("attr{n}")));
    let mut domains = vec![730];
    domains.extend(extra_attrs);
    random_background(&BackgroundConfig {
        n_records: 100_000,
        n_sources: 2_000,
        n_middles: 2_300,
        n_destinations: 7_000,
        schema: ModeSchema::new(names).map_err(err)?,
        attr_domains: domains,
        seed: derive_seed(SEED, 0),
        ..Default::default()
    })
    .map_err(err)
}

fn injection(nx: usize, ny: usize, nz: usize) -> InjectionConfig {
    InjectionConfig {
        n_sources: nx,
        n_middles: ny,
        n_destinations: nz,
        rng_seed: derive_seed(SEED, 1),
        ..Default::default()
    }
}

fn money_sweep() -> Sweep {
    Sweep::Money((1..=10).map(|k| k as f64 * 1e6).collect())
}

fn planted_sweep(bg: &Background, nx: usize, ny: usize, nz: usize) -> Result<SweepReport, String> {
    evaluate_sweep(
        &bg.records,
        &bg.roles,
        &bg.schema,
        &bg.attr_domains,
        &injection(nx, ny, nz),
        &money_sweep(),
        &MetricParams::new(ALPHA).map_err(err)?,
    )
    .map_err(err)
}

fn upper_half_exact(r: &SweepReport) -> Result<(), String> {
    for o in r.outcomes.iter().filter(|o| o.point.density >= 0.5) {
        ensure(o.point.f_measure == 1.0, || {
            format!("F = {} at normalized density {}", o.point.f_measure, o.point.density)
        })?;
    }
    Ok(())
}

fn f_values(r: &SweepReport) -> String {
    r.outcomes
        .iter()
        .map(|o| format!("{:.2}", o.point.f_measure))
        .collect::<Vec<_>>()
        .join(" ")
}

fn planted_recovery() -> Check {
    let bg = background(&[])?;
    let r = planted_sweep(&bg, 5, 10, 5)?;
    upper_half_exact(&r)?;
    ensure(r.fauc >= 0.9, || format!("FAUC {} below 0.9", r.fauc))?;
    Ok(format!("FAUC {:.4}; F by density: {}", r.fauc, f_values(&r)))
}

fn robustness_grid() -> Check {
    let bg = background(&[])?;
    let mut out = Vec::new();
    for (nx, ny, nz) in [(5, 10, 5), (10, 10, 10), (10, 5, 10)] {
        let r = planted_sweep(&bg, nx, ny, nz)?;
        ensure(r.fauc >= 0.9, || format!("{nx}:{ny}:{nz} FAUC {} below 0.9", r.fauc))?;
        out.push(format!("{nx}:{ny}:{nz} {:.4}", r.fauc));
    }
    Ok(format!("FAUC {}", out.join(", ")))
}

fn four_modes() -> Check {
    let bg = background(&[8])?;
    let r = planted_sweep(&bg, 5, 10, 5)?;
    upper_half_exact(&r)?;
    Ok(format!("FAUC {:.4}; F by density: {}", r.fauc, f_values(&r)))
}

/// Residue bound and single attribute cell for every injected middle account.
fn audit(inj: &Injection) -> Result<usize, String> {
    let cfg = &inj.config;
    let mut inflow = std::collections::BTreeMap::<&str, f64>::new();
    let mut outflow = std::collections::BTreeMap::<&str, f64>::new();
    let mut cells = std::collections::BTreeMap::<&str, BTreeSet<&[u32]>>::new();
    for r in inj.injected() {
        let y = if inj.truth.middles.contains(&r.dst) {
            *inflow.entry(&r.dst).or_default() += r.amount;
            &r.dst
        } else if inj.truth.middles.contains(&r.src) {
            *outflow.entry(&r.src).or_default() += r.amount;
            &r.src
        } else {
            return Err(format!(
                "injected record {} -> {} touches no middle account",
                r.src, r.dst
            ));
        };
        cells.entry(y).or_default().insert(&r.attrs);
    }
    ensure(inflow.len() == cfg.n_middles && outflow.len() == cfg.n_middles, || {
        "some middle account lacks an in- or out-transfer".into()
    })?;
    for (y, &a) in &inflow {
        let b = outflow[y];
        let cap = cfg.camouflage_max.min(cfg.camouflage_cap_frac * a);
        ensure(b <= a * (1.0 + 1e-12), || format!("{y} forwards {b} of {a}"))?;
        ensure(a - b <= cap * (1.0 + 1e-9) + 1e-9 * a, || {
            format!("{y}: residue {} over cap {cap}", a - b)
        })?;
        ensure(cells[y].len() == 1, || {
            format!("{y} spans {} attribute cells", cells[y].len())
        })?;
    }
    Ok(inflow.len())
}

fn generator_audit() -> Check {
    let mut middles = 0;
    let mut injections = 0;
    for extra in [&[][..], &[8][..]] {
        let bg = background(extra)?;
        let sweep = money_sweep();
        for (nx, ny, nz) in [(5, 10, 5), (10, 10, 10), (10, 5, 10)] {
            for p in [1.0, 0.5, 0.2] {
                let base = InjectionConfig {
                    edge_prob: p,
                    ..injection(nx, ny, nz)
                };
                for i in 0..sweep.len() {
                    let inj =
                        inject(&bg.records, &bg.roles, &bg.attr_domains, &sweep.point_config(&base, i)).map_err(err)?;
                    middles += audit(&inj)?;
                    injections += 1;
                }
            }
        }
    }
    Ok(format!("{middles} middle accounts over {injections} injections"))
}

fn indices(t: &CoupledTensors, role: Role, ids: &BTreeSet<String>) -> Result<BTreeSet<u32>, String> {
    ids.iter()
        .map(|id| {
            t.account_index(role, id)
                .ok_or_else(|| format!("{id} missing from the tensors"))
        })
        .collect()
}

fn surprisingness_suite() -> Check {
    let bg = background(&[])?;
    let inj = inject(&bg.records, &bg.roles, &bg.attr_domains, &injection(5, 10, 5)).map_err(err)?;
    let t = CoupledTensors::build(&inj.records, &bg.roles, &bg.schema).map_err(err)?;
    let truth: &RoleSets = &inj.truth;
    let middles: Vec<u32> = indices(&t, Role::Middle, &truth.middles)?.into_iter().collect();
    let block = account_block(
        &t,
        indices(&t, Role::Source, &truth.sources)?,
        &middles,
        indices(&t, Role::Destination, &truth.destinations)?,
    );
    let observed = total_block_mass(&t, &block).map_err(err)?;
    let masses = sample_flow_masses(&t, FlowSize::of(truth), 5000, derive_seed(SEED, 2)).map_err(err)?;
    let fit = gp_fit(&masses, 0.1).map_err(err)?;
    let s = surprisingness(&fit, observed);
    ensure(s >= 0.99, || format!("planted flow surprisingness {s}"))?;

    let lambda = 0.25;
    let mut worst = (0.0f64, 0.0f64);
    for seed in 0..5 {
        let y: Vec<f64> = Exp::new(lambda)
            .map_err(err)?
            .sample_iter(ChaCha8Rng::seed_from_u64(seed))
            .take(5000)
            .collect();
        let (xi, sigma, _, _) = fit_exceedances(&y).map_err(err)?;
        ensure(xi.abs() <= 0.1, || format!("exponential seed {seed}: shape {xi}"))?;
        ensure((sigma * lambda - 1.0).abs() <= 0.1, || {
            format!("exponential seed {seed}: scale {sigma} vs 4")
        })?;
        worst = (worst.0.max(xi.abs()), worst.1.max((sigma * lambda - 1.0).abs()));
    }

    let fixtures: Vec<Vec<f64>> = vec![
        gp_oracle::draws(500, 0.3, 2.0, 1),
        gp_oracle::draws(500, -0.2, 5.0, 2),
        gp_oracle::draws(500, 0.05, 1.0, 3),
        Exp::new(1.0)
            .map_err(err)?
            .sample_iter(ChaCha8Rng::seed_from_u64(4))
            .take(500)
            .collect(),
        LogNormal::new(0.0, 1.0)
            .map_err(err)?
            .sample_iter(ChaCha8Rng::seed_from_u64(5))
            .take(500)
            .collect(),
    ];
    for (k, y) in fixtures.iter().enumerate() {
        let (xi, sigma, _, _) = fit_exceedances(y).map_err(err)?;
        let at_fit = gp_oracle::log_likelihood(y, xi, sigma);
        let grid = gp_oracle::grid_best(y);
        ensure(at_fit >= grid, || {
            format!("fixture {k}: fit {at_fit} below grid {grid}")
        })?;
    }
    Ok(format!(
        "planted {s:.6} (mass {observed:.4e}, threshold {:.4e}); exponential |xi| <= {:.3}, scale error <= {:.1}%; {} grid fixtures beaten",
        fit.threshold,
        worst.0,
        100.0 * worst.1,
        fixtures.len()
    ))
}

fn slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (lx, ly): (Vec<f64>, Vec<f64>) = points.iter().map(|&(x, y)| (x.ln(), y.ln())).unzip();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

fn scalability() -> Check {
    let scales = [10_000, 31_623, 100_000, 316_228, 1_000_000, 3_162_278, 10_000_000];
    let params = MetricParams::new(ALPHA).map_err(err)?;
    let mut points = Vec::new();
    let mut largest = Duration::ZERO;
    for (i, &n) in scales.iter().enumerate() {
        let start = Instant::now();
        let t = scaling_tensors(n, derive_seed(derive_seed(SEED, 3), i as u64)).map_err(err)?;
        // small sizes are cheap and noisy, so they get more repeats
        let repeats = (2_000_000 / n).clamp(5, 200);
        let best = (0..repeats)
            .map(|_| {
                let s = Instant::now();
                detect(&t, &params).map(|_| s.elapsed().as_secs_f64())
            })
            .try_fold(f64::INFINITY, |m, s| s.map(|s| m.min(s)))
            .map_err(err)?;
        largest = start.elapsed();
        points.push(((t.p_nnz() + t.q_nnz()) as f64, best));
    }
    let b = slope(&points);
    let table = points
        .iter()
        .map(|(n, s)| format!("{n:.0}:{s:.4}s"))
        .collect::<Vec<_>>()
        .join(" ");
    ensure(b <= 1.15, || format!("slope {b:.3} above 1.15 ({table})"))?;
    ensure(largest < Duration::from_secs(900), || {
        format!("largest point took {:.0} s", largest.as_secs_f64())
    })?;
    Ok(format!(
        "slope {b:.3}; largest point {:.1} s; {table}",
        largest.as_secs_f64()
    ))
}

/// Stdout plus every output file, in path order.
fn snapshot(args: &[&str], outputs: &[PathBuf], mask: fn(&[u8]) -> Vec<u8>) -> Result<Vec<(String, Vec<u8>)>, String> {
    for p in outputs {
        if p.is_dir() {
            std::fs::remove_dir_all(p).map_err(err)?;
        } else if p.exists() {
            std::fs::remove_file(p).map_err(err)?;
        }
    }
    let out = Command::new(env!("CARGO_BIN_EXE_coupledflow"))
        .args(args)
        .output()
        .map_err(err)?;
    ensure(out.status.success(), || {
        format!("{} failed: {}", args[0], String::from_utf8_lossy(&out.stderr).trim())
    })?;
    let mut snap = vec![("stdout".to_string(), mask(&out.stdout))];
    let mut files = Vec::new();
    for p in outputs {
        collect_files(p, &mut files)?;
    }
    files.sort();
    for f in files {
        let bytes = std::fs::read(&f).map_err(err)?;
        snap.push((f.display().to_string(), mask(&bytes)));
    }
    Ok(snap)
}

fn collect_files(p: &Path, out: &mut Vec<PathBuf>) -> Result<(), String> {
    if p.is_dir() {
        for entry in std::fs::read_dir(p).map_err(err)? {
            collect_files(&entry.map_err(err)?.path(), out)?;
        }
    } else {
        out.push(p.to_path_buf());
    }
    Ok(())
}

fn unmasked(b: &[u8]) -> Vec<u8> {
    b.to_vec()
}

/// Blanks the wall-time column of bench output.
fn mask_seconds(b: &[u8]) -> Vec<u8> {
    let text = String::from_utf8_lossy(b);
    let mut out = String::new();
    for line in text.lines() {
        match line.rsplit_once('\t') {
            Some((head, _)) => out.push_str(&format!("{head}\t*\n")),
            None => out.push_str(&format!("{line}\n")),
        }
    }
    out.into_bytes()
}

/// Label, arguments, output paths and output mask of one CLI invocation.
type Run = (&'static str, Vec<String>, Vec<PathBuf>, fn(&[u8]) -> Vec<u8>);

fn determinism() -> Check {
    let dir = tempfile::tempdir().map_err(err)?;
    let p = |name: &str| dir.path().join(name);
    let s = |path: &Path| path.to_str().expect("utf-8 temp path").to_string();
    let inj = p("inj");
    let data = s(&inj.join("transactions.csv"));
    let roles = [
        "--sources".to_string(),
        s(&inj.join("sources.txt")),
        "--middles".to_string(),
        s(&inj.join("middles.txt")),
        "--destinations".to_string(),
        s(&inj.join("destinations.txt")),
    ];
    let background = [
        "--random-background",
        "--background-records",
        "20000",
        "--background-sources",
        "400",
        "--background-middles",
        "460",
        "--background-destinations",
        "1400",
        "--background-bins",
        "240",
        "--seed",
        "7",
    ];
    let with =
        |head: &[&str], tail: &[&str]| -> Vec<String> { head.iter().chain(tail).map(|a| a.to_string()).collect() };
    let mut runs: Vec<Run> = Vec::new();
    let mut inject_args = with(&["inject"], &background);
    inject_args.extend(["--output".to_string(), s(&inj)]);
    runs.push(("inject", inject_args, vec![inj.clone()], unmasked));
    let mut detect_args = with(&["detect", "--input", &data, "--truth"], &[&s(&inj.join("truth.txt"))]);
    detect_args.extend(roles.iter().cloned());
    runs.push(("detect", detect_args.clone(), vec![], unmasked));
    detect_args.extend(["--format", "json", "--output", &s(&p("detect.json"))].map(String::from));
    runs.push(("detect --format json", detect_args, vec![p("detect.json")], unmasked));
    let mut sweep_args = with(&["sweep"], &background);
    sweep_args.extend(
        [
            "--values",
            "1000000,4000000,7000000,10000000",
            "--output",
            &s(&p("sweep")),
        ]
        .map(String::from),
    );
    runs.push(("sweep", sweep_args, vec![p("sweep")], unmasked));
    let mut surprise_args = with(&["surprise", "--input", &data, "--samples", "2000", "--seed", "7"], &[]);
    surprise_args.extend(roles.iter().cloned());
    runs.push(("surprise", surprise_args.clone(), vec![], unmasked));
    surprise_args.extend(["--block", &s(&inj.join("truth.txt")), "--format", "json"].map(String::from));
    runs.push(("surprise --block", surprise_args, vec![], unmasked));
    runs.push((
        "bench",
        with(
            &["bench", "--scales", "10000,30000", "--repeats", "2", "--seed", "7"],
            &[],
        ),
        vec![],
        mask_seconds,
    ));

    let mut names = Vec::new();
    for (name, args, outputs, mask) in &runs {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let first = snapshot(&args, outputs, *mask)?;
        let second = snapshot(&args, outputs, *mask)?;
        ensure(first.len() == second.len(), || {
            format!("{name}: output file sets differ")
        })?;
        for ((path, a), (_, b)) in first.iter().zip(&second) {
            ensure(a == b, || format!("{name}: {path} differs between runs"))?;
        }
        names.push(*name);
    }
    Ok(format!("identical reruns: {}", names.join(", ")))
}

fn criteria() -> Vec<Criterion> {
    let secs = |s| Some(Duration::from_secs(s));
    vec![
        Criterion {
            id: 1,
            name: "metric identities",
            limit: secs(1),
            run: metric_identities,
        },
        Criterion {
            id: 2,
            name: "detector oracle equivalence",
            limit: secs(10),
            run: oracle_equivalence,
        },
        Criterion {
            id: 3,
            name: "planted-flow recovery",
            limit: secs(120),
            run: planted_recovery,
        },
        Criterion {
            id: 4,
            name: "robustness grid",
            limit: secs(360),
            run: robustness_grid,
        },
        Criterion {
            id: 5,
            name: "four-mode recovery",
            limit: secs(180),
            run: four_modes,
        },
        Criterion {
            id: 6,
            name: "generator audit",
            limit: None,
            run: generator_audit,
        },
        Criterion {
            id: 7,
            name: "tail surprisingness",
            limit: None,
            run: surprisingness_suite,
        },
        Criterion {
            id: 8,
            name: "near-linear scalability",
            limit: None,
            run: scalability,
        },
        Criterion {
            id: 9,
            name: "CLI determinism",
            limit: None,
            run: determinism,
        },
    ]
}

fn main() -> ExitCode {
    let selected: BTreeSet<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for c in criteria()
        .into_iter()
        .filter(|c| selected.is_empty() || selected.contains(&c.id))
    {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let result = match (result, c.limit) {
            (Ok(_), Some(limit)) if elapsed > limit => Err(format!(
                "took {:.1} s, limit {} s",
                elapsed.as_secs_f64(),
                limit.as_secs()
            )),
            (r, _) => r,
        };
        let (tag, detail) = match result {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} {} {} [{:.1} s]: {detail}", c.id, c.name, elapsed.as_secs_f64());
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
