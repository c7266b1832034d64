mod range;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use cr2_core::actors::OperatorPolicy;
use cr2_core::analysis::{self, BitBiasReport, CostReport, GrindReport, LastPositionReport, PositionReport};
use cr2_core::ledger::CostMeter;
use cr2_core::simulator::{
    self, griefing_report, GriefingReport, OperatorSelector, PolicyAssignment, SelectorRole, SweepRow,
};
use cr2_core::vectors;
use cr2_core::{ScenarioScript, SimError, Transcript};
use serde::Serialize;

use range::NRange;

#[derive(Debug, Parser)]
#[command(
    name = "cr2",
    version,
    about = "Run beacon scenarios, cost sweeps, statistics and golden vectors"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Scenario file (JSON).
    #[arg(long, global = true, value_name = "PATH")]
    scenario: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Operator counts: `7`, `3..32`, or `3,10,20,32`.
    #[arg(long, global = true, value_name = "RANGE")]
    n: Option<NRange>,
    /// Rounds to run or sample.
    #[arg(long, global = true, value_name = "N")]
    rounds: Option<u64>,
    /// Output directory; `CR2_OUT` takes precedence.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Format of the report printed to stdout.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
    Text,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one scenario and write its transcript.
    Run,
    /// Run a scenario template at several operator counts and fit the counters.
    Sweep,
    /// Output bit bias, reveal positions and the grinding probe over honest rounds.
    Bias,
    /// Leader versus griefer work across operator counts.
    Grief,
    /// Re-derive the golden vectors.
    Vectors,
}

/// Maps onto the process exit code.
#[derive(Debug)]
enum Failure {
    /// A check on the produced results did not hold.
    Assertion(anyhow::Error),
    /// Bad flags or an unusable scenario.
    Usage(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Assertion(e)
    }
}

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

fn sim_failure(e: SimError) -> Failure {
    match e {
        SimError::InvalidScenario(_) | SimError::Setup(_) => Failure::Usage(e.into()),
        _ => Failure::Assertion(e.into()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(&cli) {
        Ok(report) => {
            print!("{report}");
            ExitCode::SUCCESS
        }
        Err(Failure::Assertion(e)) => {
            eprintln!("cr2: check failed: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(e)) => {
            eprintln!("cr2: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn out_dir(cli: &Cli) -> PathBuf {
    std::env::var_os("CR2_OUT")
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .unwrap_or_else(|| cli.out.clone())
}

/// Writes through a sibling temp file so readers never see partial output.
fn write_file(dir: &Path, name: &str, contents: &str) -> Result<(), Failure> {
    fs::create_dir_all(dir)
        .with_context(|| format!("creating {}", dir.display()))
        .map_err(usage)?;
    let path = dir.join(name);
    let tmp = dir.join(format!(".{name}.tmp"));
    fs::write(&tmp, contents).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, &path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports serialize");
    s.push('\n');
    s
}

fn load_scenario(cli: &Cli, required: bool) -> Result<Option<ScenarioScript>, Failure> {
    let Some(path) = &cli.scenario else {
        return if required {
            Err(usage(anyhow::anyhow!("--scenario is required for this command")))
        } else {
            Ok(None)
        };
    };
    let mut script = ScenarioScript::load(path)
        .with_context(|| format!("reading scenario {}", path.display()))
        .map_err(usage)?;
    if script.name.is_empty() {
        script.name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "scenario".to_owned());
    }
    if let Some(seed) = cli.seed {
        script.seed = seed;
    }
    if let Some(rounds) = cli.rounds {
        script.rounds = usize::try_from(rounds).map_err(usage)?;
    }
    // Role selectors resolve against the seed, so check again after overrides.
    script.validate().map_err(sim_failure)?;
    Ok(Some(script))
}

fn execute(cli: &Cli) -> Result<String, Failure> {
    match cli.command {
        Command::Run => cmd_run(cli),
        Command::Sweep => cmd_sweep(cli),
        Command::Bias => cmd_bias(cli),
        Command::Grief => cmd_grief(cli),
        Command::Vectors => cmd_vectors(cli),
    }
}

fn meter_text(m: &CostMeter) -> String {
    CostMeter::COUNTER_NAMES
        .iter()
        .zip(m.counters())
        .map(|(name, v)| format!("{name}={v}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn meter_header() -> Vec<&'static str> {
    let mut h = CostMeter::COUNTER_NAMES.to_vec();
    h.push("total");
    h
}

fn meter_fields(m: &CostMeter) -> Vec<String> {
    let mut f: Vec<String> = m.counters().iter().map(u64::to_string).collect();
    f.push(m.total().to_string());
    f
}

fn csv_string(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String, Failure> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).context("csv")?;
    for row in rows {
        w.write_record(&row).context("csv")?;
    }
    let bytes = w.into_inner().map_err(|e| anyhow::anyhow!("csv: {e}"))?;
    Ok(String::from_utf8(bytes).expect("csv of utf-8 fields"))
}

fn routes_csv(t: &Transcript) -> Result<String, Failure> {
    let mut header = vec!["round", "outcome", "calls", "output"];
    header.extend(meter_header());
    csv_string(
        &header,
        t.summary.routes.iter().map(|r| {
            let mut row = vec![
                r.round.to_string(),
                format!("{:?}", r.outcome),
                r.calls.join(" "),
                t.final_output(r.round).map(|o| o.to_hex()).unwrap_or_default(),
            ];
            row.extend(meter_fields(&r.meter));
            row
        }),
    )
}

fn cmd_run(cli: &Cli) -> Result<String, Failure> {
    let mut script = load_scenario(cli, true)?.expect("required");
    if let Some(n) = &cli.n {
        script.operators = n
            .single()
            .ok_or_else(|| usage(anyhow::anyhow!("run takes a single --n value")))?;
        script.validate().map_err(sim_failure)?;
    }
    let transcript = simulator::run(&script).map_err(sim_failure)?;
    let dir = out_dir(cli);
    write_file(
        &dir,
        &format!("{}.transcript.jsonl", script.name),
        &transcript.to_jsonl(),
    )?;
    write_file(
        &dir,
        &format!("{}.summary.json", script.name),
        &to_json(&transcript.summary),
    )?;
    let verdict = simulator::verify(&script, &transcript);

    let report = match cli.format {
        Format::Json => to_json(&transcript.summary),
        Format::Csv => routes_csv(&transcript)?,
        Format::Text => {
            let s = &transcript.summary;
            let mut out = format!(
                "scenario {} seed {} mode {:?} operators {} ticks {}\n",
                s.scenario, s.seed, s.mode, s.operators, s.ticks
            );
            for r in &s.routes {
                let _ = writeln!(out, "round {} {:?}: {}", r.round, r.outcome, r.calls.join(" -> "));
                if let Some(o) = transcript.final_output(r.round) {
                    let _ = writeln!(out, "  output {}", o.to_hex());
                }
                let _ = writeln!(out, "  {}", meter_text(&r.meter));
            }
            let f = &s.funds;
            let _ = writeln!(
                out,
                "funds external {} internal {} ({})",
                f.external_inflow,
                f.internal_total,
                if f.conserved() { "conserved" } else { "NOT conserved" }
            );
            if script.expected_route.is_some() {
                let _ = writeln!(out, "route check {}", if verdict.is_ok() { "pass" } else { "FAIL" });
            }
            out
        }
    };
    verdict.map_err(sim_failure)?;
    Ok(report)
}

fn fits_csv(report: &CostReport) -> Result<String, Failure> {
    csv_string(
        &["counter", "slope", "intercept", "r_squared", "max_second_difference"],
        report.fits.iter().map(|f| {
            vec![
                f.counter.clone(),
                f.slope.to_string(),
                f.intercept.to_string(),
                f.r_squared.to_string(),
                f.max_second_difference.to_string(),
            ]
        }),
    )
}

fn sweep_csv(rows: &[SweepRow]) -> Result<String, Failure> {
    let mut header = vec!["n"];
    header.extend(meter_header());
    header.push("calls");
    csv_string(
        &header,
        rows.iter().map(|r| {
            let mut row = vec![r.n.to_string()];
            row.extend(meter_fields(&r.meter));
            row.push(r.calls.join(" "));
            row
        }),
    )
}

#[derive(Serialize)]
struct SweepOutput<'a> {
    scenario: &'a str,
    seed: u64,
    rows: &'a [SweepRow],
    fits: Option<&'a CostReport>,
}

fn cmd_sweep(cli: &Cli) -> Result<String, Failure> {
    let template = load_scenario(cli, false)?.unwrap_or_else(|| {
        let mut s = ScenarioScript::honest(3, cli.seed.unwrap_or(0));
        s.name = "honest".to_owned();
        s
    });
    let ns = cli.n.clone().unwrap_or_else(|| NRange((3..=32).collect())).0;
    let rows = simulator::sweep(&template, &ns).map_err(sim_failure)?;
    let fits = analysis::cost_report(&rows).ok();
    let dir = out_dir(cli);
    let sweep = sweep_csv(&rows)?;
    write_file(&dir, &format!("{}.sweep.csv", template.name), &sweep)?;
    if let Some(f) = &fits {
        write_file(&dir, &format!("{}.fits.csv", template.name), &fits_csv(f)?)?;
    }

    if let Some(expected) = &template.expected_route {
        if let Some(bad) = rows.iter().find(|r| &r.calls != expected) {
            return Err(anyhow::anyhow!(
                "n={}: route {:?} differs from expected {:?}",
                bad.n,
                bad.calls,
                expected
            )
            .into());
        }
    }

    Ok(match cli.format {
        Format::Csv => sweep,
        Format::Json => to_json(&SweepOutput {
            scenario: &template.name,
            seed: template.seed,
            rows: &rows,
            fits: fits.as_ref(),
        }),
        Format::Text => {
            let mut out = format!("{:>4}", "n");
            for h in meter_header() {
                let _ = write!(out, " {h:>24}");
            }
            out.push('\n');
            for r in &rows {
                let _ = write!(out, "{:>4}", r.n);
                for v in meter_fields(&r.meter) {
                    let _ = write!(out, " {v:>24}");
                }
                out.push('\n');
            }
            if let Some(f) = &fits {
                for fit in &f.fits {
                    let _ = writeln!(
                        out,
                        "{:<24} slope {:>10.4} intercept {:>10.4} r2 {:.6} max|d2| {}",
                        fit.counter, fit.slope, fit.intercept, fit.r_squared, fit.max_second_difference
                    );
                }
            }
            out
        }
    })
}

#[derive(Serialize)]
struct BiasOutput {
    tolerance: f64,
    bits: BitBiasReport,
    last_position: LastPositionReport,
    positions: PositionReport,
    grind: GrindReport,
}

/// Four standard deviations of a Bernoulli(p) mean over `samples` draws.
fn four_sigma(p: f64, samples: u64) -> f64 {
    4.0 * (p * (1.0 - p) / samples as f64).sqrt()
}

fn cmd_bias(cli: &Cli) -> Result<String, Failure> {
    let n = match &cli.n {
        Some(r) => r
            .single()
            .ok_or_else(|| usage(anyhow::anyhow!("bias takes a single --n value")))?,
        None => 3,
    };
    let rounds = cli.rounds.unwrap_or(10_000);
    let seed = cli.seed.unwrap_or(0);
    let a = |e: analysis::AnalysisError| usage(anyhow::Error::from(e));
    let report = BiasOutput {
        tolerance: four_sigma(0.5, rounds),
        bits: analysis::bias_test(rounds, n, seed).map_err(a)?,
        last_position: analysis::last_position_test(rounds, n, 1, seed).map_err(a)?,
        positions: analysis::position_matrix(rounds, n, seed).map_err(a)?,
        grind: analysis::grind_resistance_probe(rounds, n, 0, 8, seed).map_err(a)?,
    };
    let dir = out_dir(cli);
    write_file(&dir, "bias.json", &to_json(&report))?;
    let bits_csv = csv_string(
        &["bit", "ones", "frequency"],
        (0..256).map(|i| {
            vec![
                i.to_string(),
                report.bits.ones[i].to_string(),
                report.bits.per_bit_frequency[i].to_string(),
            ]
        }),
    )?;
    write_file(&dir, "bias.csv", &bits_csv)?;

    let lp = &report.last_position;
    let g = &report.grind;
    let mut failures = Vec::new();
    if !report.bits.within(report.tolerance) {
        failures.push(format!(
            "bit bias {:.4} exceeds {:.4}",
            report.bits.max_deviation, report.tolerance
        ));
    }
    if (lp.frequency - lp.expected).abs() > four_sigma(lp.expected, rounds) {
        failures.push(format!(
            "last-position frequency {:.4} vs {:.4}",
            lp.frequency, lp.expected
        ));
    }
    if (g.frequency - g.expected).abs() > four_sigma(g.expected, rounds) {
        failures.push(format!("grind frequency {:.4} vs {:.4}", g.frequency, g.expected));
    }
    if g.post_commit_rejections != g.post_commit_attempts {
        failures.push("a post-commit substitution was accepted".to_owned());
    }

    let text = match cli.format {
        Format::Json => to_json(&report),
        Format::Csv => bits_csv,
        Format::Text => {
            let mut out = format!(
                "n {n} rounds {rounds} seed {seed}\nbit means: max |f-0.5| {:.5} (bound {:.5})\n",
                report.bits.max_deviation, report.tolerance
            );
            let _ = writeln!(
                out,
                "operator 0 last: {:.4} (expected {:.4})",
                lp.frequency, lp.expected
            );
            let _ = writeln!(
                out,
                "grinding B=8: {:.4} (expected {:.4}); post-commit substitutions rejected {}/{}",
                g.frequency, g.expected, g.post_commit_rejections, g.post_commit_attempts
            );
            let _ = writeln!(out, "position matrix (rows operators, columns positions):");
            for o in 0..n {
                let cells: Vec<String> = (0..n)
                    .map(|p| format!("{:.3}", report.positions.frequency(o, p)))
                    .collect();
                let _ = writeln!(out, "  {}", cells.join(" "));
            }
            out
        }
    };
    if !failures.is_empty() {
        return Err(anyhow::anyhow!(failures.join("; ")).into());
    }
    Ok(text)
}

fn cmd_grief(cli: &Cli) -> Result<String, Failure> {
    let template = load_scenario(cli, false)?.unwrap_or_else(|| {
        let mut s = ScenarioScript::honest(3, cli.seed.unwrap_or(1));
        s.name = "griefing".to_owned();
        s.policies.push(PolicyAssignment {
            operator: OperatorSelector::Role(SelectorRole::LastRevealer),
            policy: OperatorPolicy::LateOnChainGriefer,
        });
        s
    });
    let ns = cli.n.clone().unwrap_or(NRange(vec![3, 10, 20, 32])).0;
    let reports: Vec<GriefingReport> = ns
        .iter()
        .map(|&n| {
            let mut s = template.clone();
            s.operators = n;
            s.expected_route = None;
            griefing_report(&s)
        })
        .collect::<Result<_, _>>()
        .map_err(sim_failure)?;

    let table = csv_string(
        &[
            "n",
            "leader_work",
            "griefer_work",
            "ratio",
            "griefer_slashed",
            "same_output",
            "route",
        ],
        reports.iter().map(|r| {
            vec![
                r.n.to_string(),
                r.leader_work.to_string(),
                r.griefer_work.to_string(),
                format!("{:.6}", r.ratio),
                r.griefer_slashed.to_string(),
                r.same_output().to_string(),
                r.route.join(" "),
            ]
        }),
    )?;
    let dir = out_dir(cli);
    write_file(&dir, "grief.csv", &table)?;
    write_file(&dir, "grief.json", &to_json(&reports))?;

    let mut failures = Vec::new();
    for r in &reports {
        if r.griefer_slashed || !r.same_output() {
            failures.push(format!("n={}: griefer slashed or output changed", r.n));
        }
        if let Some(expected) = &template.expected_route {
            if &r.route != expected {
                failures.push(format!("n={}: route {:?}", r.n, r.route));
            }
        }
    }
    let mut sorted = reports.clone();
    sorted.sort_by_key(|r| r.n);
    if sorted.windows(2).any(|w| w[1].ratio <= w[0].ratio && w[1].n > w[0].n) {
        failures.push("ratio does not increase with n".to_owned());
    }

    let text = match cli.format {
        Format::Csv => table,
        Format::Json => to_json(&reports),
        Format::Text => {
            let mut out = format!("{:>4} {:>12} {:>12} {:>8}\n", "n", "leader", "griefer", "ratio");
            for r in &reports {
                let _ = writeln!(
                    out,
                    "{:>4} {:>12} {:>12} {:>8.3}",
                    r.n, r.leader_work, r.griefer_work, r.ratio
                );
            }
            out
        }
    };
    if !failures.is_empty() {
        return Err(anyhow::anyhow!(failures.join("; ")).into());
    }
    Ok(text)
}

fn cmd_vectors(cli: &Cli) -> Result<String, Failure> {
    let parsed = vectors::parse(vectors::GOLDEN).context("embedded golden vectors")?;
    let report = vectors::check_all(&parsed);
    write_file(&out_dir(cli), "vectors.json", &to_json(&report))?;
    let text = match cli.format {
        Format::Json => to_json(&report),
        Format::Csv => csv_string(
            &["checked", "passed", "failed"],
            [vec![
                report.checked.to_string(),
                report.passed.to_string(),
                report.failures.len().to_string(),
            ]],
        )?,
        Format::Text => {
            let mut out = format!("{}/{} golden vectors pass\n", report.passed, report.checked);
            for f in &report.failures {
                let _ = writeln!(out, "  {f}");
            }
            out
        }
    };
    if !report.all_passed() {
        return Err(anyhow::anyhow!("{} golden vectors failed", report.failures.len()).into());
    }
    Ok(text)
}
