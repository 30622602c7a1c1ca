use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::builder::{PossibleValuesParser, TypedValueParser};
use clap::{Args, Parser, Subcommand};
use riskclear_core::evaluate::{evaluate, ScenarioReport};
use riskclear_core::formulations::{clear, ClearingResult, ModelKind};
use riskclear_core::model::{load_case, SystemCase};
use riskclear_core::network::{clear_network, network_prices, NetworkClearingResult};
use riskclear_core::pricing::{extract_prices, settle, PriceSet, Settlement};
use riskclear_core::Error;

mod artifacts;
mod tables;

use artifacts::{sorted_json, Outputs, RunManifest};

#[derive(Parser)]
#[command(name = "riskclear", version, about = "Risk-aware electricity market clearing under wind uncertainty")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Clear one model and write result, prices and settlement.
    Solve(SolveArgs),
    /// Monte-Carlo evaluation of cleared results.
    Evaluate(EvaluateArgs),
    /// Clear several models and print them side by side.
    Compare(CompareArgs),
}

fn model_parser() -> impl TypedValueParser<Value = ModelKind> {
    PossibleValuesParser::new(ModelKind::ALL.map(ModelKind::cli_name))
        .map(|s| s.parse::<ModelKind>().expect("listed names parse"))
}

#[derive(Args)]
struct CaseArgs {
    /// Case file (JSON).
    case: PathBuf,
    /// Clear on the DC network with nodal prices (ldt-cc only).
    #[arg(long)]
    network: bool,
    /// With --network, size reserves per wind node.
    #[arg(long, requires = "network")]
    locational: bool,
    /// Also enforce the lower generation limit in the chance constraints.
    #[arg(long)]
    min_side: bool,
    /// Print results as JSON with sorted keys.
    #[arg(long)]
    json: bool,
    /// Directory for output files.
    #[arg(long, default_value = "riskclear-out")]
    out: PathBuf,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    case: CaseArgs,
    #[arg(long, value_parser = model_parser())]
    model: ModelKind,
    /// Print dispatch and price tables.
    #[arg(long)]
    table: bool,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    case: CaseArgs,
    /// Models to run; repeat the flag. Defaults to all (ldt-cc with --network).
    #[arg(long, value_parser = model_parser())]
    model: Vec<ModelKind>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Case file the results were cleared on.
    case: PathBuf,
    /// result.json files written by `solve`.
    #[arg(required = true)]
    results: Vec<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    scenarios: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Print mean and std per model.
    #[arg(long)]
    summary: bool,
    #[arg(long)]
    json: bool,
    #[arg(long, default_value = "riskclear-out")]
    out: PathBuf,
}

/// A cleared model, with the network view when there is one.
#[allow(clippy::large_enum_variant)]
enum Cleared {
    System(ClearingResult),
    Network(NetworkClearingResult),
}

impl Cleared {
    fn base(&self) -> &ClearingResult {
        match self {
            Cleared::System(r) => r,
            Cleared::Network(r) => &r.base,
        }
    }

    fn to_json(&self) -> anyhow::Result<String> {
        match self {
            Cleared::System(r) => sorted_json(r),
            Cleared::Network(r) => sorted_json(r),
        }
    }
}

struct Run {
    cleared: Cleared,
    prices: PriceSet,
    settlement: Settlement,
}

fn load(args: &CaseArgs) -> anyhow::Result<SystemCase> {
    let mut case = load_case(&args.case).with_context(|| format!("loading {}", args.case.display()))?;
    if args.min_side {
        case.options.enforce_min_side = true;
    }
    Ok(case)
}

fn run_model(case: &SystemCase, kind: ModelKind, args: &CaseArgs) -> anyhow::Result<Run> {
    let cleared = if args.network {
        if kind != ModelKind::LdtCc {
            return Err(Error::Unsupported(format!(
                "network clearing is available for ldt-cc, not {}",
                kind.cli_name()
            ))
            .into());
        }
        Cleared::Network(clear_network(case, args.locational)?)
    } else {
        Cleared::System(clear(case, kind)?)
    };
    let prices = match &cleared {
        Cleared::System(r) => extract_prices(r, case)?,
        Cleared::Network(r) => network_prices(r),
    };
    for w in prices.sign_warnings() {
        eprintln!("warning: {kind}: {w}");
    }
    let settlement = settle(cleared.base(), &prices, case);
    Ok(Run { cleared, prices, settlement })
}

fn cmd_solve(args: SolveArgs) -> anyhow::Result<()> {
    let case = load(&args.case)?;
    let run = run_model(&case, args.model, &args.case)?;
    let mut out = Outputs::new(&args.case.out)?;
    out.write("result.json", &run.cleared.to_json()?)?;
    out.write("prices.json", &sorted_json(&run.prices)?)?;
    out.write("settlement.csv", &run.settlement.to_csv())?;
    if let Cleared::Network(r) = &run.cleared {
        out.write("lmp.csv", &tables::lmp_csv(&case, std::slice::from_ref(r)))?;
    }
    RunManifest::new("solve", &args.case.case, &case, vec![args.model], &out).write(&mut out)?;

    if args.case.json {
        println!("{}", run.cleared.to_json()?);
    }
    if args.table {
        print_tables(&case, &[run]);
    }
    Ok(())
}

fn print_tables(case: &SystemCase, runs: &[Run]) {
    let bases: Vec<&ClearingResult> = runs.iter().map(|r| r.cleared.base()).collect();
    println!("{}", tables::dispatch_table(case, &bases));
    let priced: Vec<(&ClearingResult, &PriceSet)> = runs.iter().map(|r| (r.cleared.base(), &r.prices)).collect();
    println!("{}", tables::price_table(&priced));
    let network: Vec<NetworkClearingResult> = runs
        .iter()
        .filter_map(|r| match &r.cleared {
            Cleared::Network(n) => Some(n.clone()),
            Cleared::System(_) => None,
        })
        .collect();
    if !network.is_empty() {
        println!("{}", tables::lmp_table(case, &network));
    }
}

fn cmd_compare(args: CompareArgs) -> anyhow::Result<()> {
    let case = load(&args.case)?;
    let models = match (args.model.is_empty(), args.case.network) {
        (false, _) => args.model.clone(),
        (true, true) => vec![ModelKind::LdtCc],
        (true, false) => ModelKind::ALL.to_vec(),
    };
    // Models are independent; results are collected back in the order asked.
    let results: Vec<anyhow::Result<Run>> = std::thread::scope(|s| {
        let handles: Vec<_> = models
            .iter()
            .map(|&k| {
                let (case, opts) = (&case, &args.case);
                s.spawn(move || run_model(case, k, opts))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("model thread panicked")).collect()
    });
    let runs = results.into_iter().collect::<anyhow::Result<Vec<Run>>>()?;

    let mut out = Outputs::new(&args.case.out)?;
    let priced: Vec<(&ClearingResult, &PriceSet)> = runs.iter().map(|r| (r.cleared.base(), &r.prices)).collect();
    out.write("compare.csv", &tables::compare_csv(&case, &priced))?;
    let network: Vec<NetworkClearingResult> = runs
        .iter()
        .filter_map(|r| match &r.cleared {
            Cleared::Network(n) => Some(n.clone()),
            Cleared::System(_) => None,
        })
        .collect();
    if !network.is_empty() {
        out.write("lmp.csv", &tables::lmp_csv(&case, &network))?;
    }
    RunManifest::new("compare", &args.case.case, &case, models, &out).write(&mut out)?;

    if args.case.json {
        println!("{}", sorted_json(&tables::compare_rows(&case, &priced))?);
    } else {
        print_tables(&case, &runs);
    }
    Ok(())
}

fn report_name(model: ModelKind, taken: &mut Vec<String>, ext: &str) -> String {
    let stem = format!("report-{}", model.cli_name());
    let mut name = format!("{stem}.{ext}");
    let mut k = 2;
    while taken.contains(&name) {
        name = format!("{stem}-{k}.{ext}");
        k += 1;
    }
    taken.push(name.clone());
    name
}

fn cmd_evaluate(args: EvaluateArgs) -> anyhow::Result<()> {
    let loaded = load_case(&args.case).with_context(|| format!("loading {}", args.case.display()))?;
    let mut reports = Vec::new();
    for path in &args.results {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let r = ClearingResult::from_json(&text).with_context(|| format!("parsing {}", path.display()))?;
        // Run options (e.g. --min-side) are part of the hashed case; take them from the result.
        let mut case = loaded.clone();
        case.options = r.options;
        if r.case_hash != case.hash() {
            return Err(Error::Invariant(format!(
                "{} was cleared on a different case than {}",
                path.display(),
                args.case.display()
            ))
            .into());
        }
        reports.push((r.model, evaluate(&r, &case, args.scenarios, args.seed)?));
    }

    let mut out = Outputs::new(&args.out)?;
    let mut taken = Vec::new();
    for (model, rep) in &reports {
        out.write(&report_name(*model, &mut taken, "json"), &sorted_json(rep)?)?;
        out.write(&report_name(*model, &mut taken, "csv"), &rep.to_csv())?;
    }
    let models = reports.iter().map(|(m, _)| *m).collect();
    let mut manifest = RunManifest::new("evaluate", &args.case, &loaded, models, &out);
    manifest.results = args.results.iter().map(|p| p.display().to_string()).collect();
    manifest.scenarios = Some(args.scenarios);
    manifest.seed = Some(args.seed);
    manifest.write(&mut out)?;

    if args.json {
        let aggregates: Vec<_> = reports.iter().map(|(_, r)| &r.aggregate).collect();
        println!("{}", sorted_json(&aggregates)?);
    }
    if args.summary {
        for (_, rep) in &reports {
            println!("{}", rep.summary());
        }
        if reports.len() > 1 {
            println!("{}", ordering_line(&reports));
        }
    }
    Ok(())
}

fn ordering_line(reports: &[(ModelKind, ScenarioReport)]) -> String {
    let mut by_mean: Vec<&(ModelKind, ScenarioReport)> = reports.iter().collect();
    by_mean.sort_by(|a, b| a.1.aggregate.mean_cost.total_cmp(&b.1.aggregate.mean_cost));
    let names: Vec<String> = by_mean.iter().map(|(m, _)| m.to_string()).collect();
    format!("mean cost order: {}", names.join(" < "))
}

/// 1 for bad input, 2 for infeasible, 3 when the solver or cut loop did not converge.
fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::Infeasible(_)) => 2,
        Some(Error::IterationLimit(_) | Error::Solver(_) | Error::DegenerateCut(_) | Error::InconsistentDuals(_)) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            // Usage errors share exit 1 with other bad input; 2 means infeasible here.
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let res = match cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Compare(a) => cmd_compare(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_error_kind() {
        let code = |e: Error| exit_code(&anyhow::Error::from(e));
        assert_eq!(code(Error::Infeasible("x".into())), 2);
        assert_eq!(code(Error::IterationLimit("x".into())), 3);
        assert_eq!(code(Error::InconsistentDuals("x".into())), 3);
        assert_eq!(code(Error::Invariant("x".into())), 1);
        assert_eq!(code(Error::Io(std::io::Error::from(std::io::ErrorKind::NotFound))), 1);
        let wrapped = anyhow::Error::from(Error::Infeasible("x".into())).context("clearing");
        assert_eq!(exit_code(&wrapped), 2);
    }

    #[test]
    fn repeated_models_get_distinct_report_names() {
        let mut taken = Vec::new();
        assert_eq!(report_name(ModelKind::Cc, &mut taken, "json"), "report-cc.json");
        assert_eq!(report_name(ModelKind::Cc, &mut taken, "json"), "report-cc-2.json");
        assert_eq!(report_name(ModelKind::Cc, &mut taken, "csv"), "report-cc.csv");
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
