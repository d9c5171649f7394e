use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use pacattn::bundle::{
    alignment_problems, export_precision, load_bundle, write_bundle,
};
use pacattn::engine::{sample, GuidanceConfig, ModelDims, ToyModel};
use pacattn::eval::{emit_report, run_sweep, score, DiagnosticScores, ReportFormat, SweepSpec};
use pacattn::losses::{
    direction_check, pac_bayes_bound, separation_encouraging, total_loss, DirectionReport,
    LossBreakdown, PacConfig,
};
use pacattn::text::{parse as parse_prompt, ParsedPrompt, WordLexicon};
use pacattn::{EngineError, EvalError};
use serde::Serialize;

use crate::{pgm, CliError, GuideArgs, LossFlags};

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn engine_error(e: EngineError) -> CliError {
    match e {
        EngineError::InvalidConfig(_) | EngineError::InvalidDims(_) | EngineError::Text(_) => {
            CliError::Usage(e.to_string())
        }
        other => CliError::Engine(other.to_string()),
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("output serializes") + "\n"
}

fn lexicon(path: Option<&Path>) -> Result<WordLexicon, CliError> {
    match path {
        Some(p) => WordLexicon::load(p).map_err(|e| CliError::Data(e.to_string())),
        None => Ok(WordLexicon::builtin()),
    }
}

pub fn parse(prompt: &str, lexicon_path: Option<&Path>) -> Result<(), CliError> {
    let parsed =
        parse_prompt(prompt, &lexicon(lexicon_path)?).map_err(|e| CliError::Usage(e.to_string()))?;
    print!("{}", parsed.to_json() + "\n");
    Ok(())
}

/// Config file (or defaults) with the loss flags applied on top.
fn loss_config(flags: &LossFlags) -> Result<GuidanceConfig, CliError> {
    let mut cfg = match &flags.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
        }
        None => GuidanceConfig::default(),
    };
    let w = &mut cfg.weights;
    for (slot, value) in [
        (&mut w.lambda_div, flags.lambda_div),
        (&mut w.lambda_sim, flags.lambda_sim),
        (&mut w.lambda_out, flags.lambda_out),
        (&mut w.lambda_pac, flags.lambda_pac),
    ] {
        if let Some(v) = value {
            *slot = v;
        }
    }
    if flags.separation_signs {
        cfg.weights = separation_encouraging(&cfg.weights);
    }
    if let Some(d) = flags.delta {
        cfg.pac.delta = d;
    }
    if let Some(n) = flags.n_samples {
        cfg.pac.n_samples = n;
    }
    if let Some(s) = flags.smoothing {
        cfg.smoothing = s;
    }
    Ok(cfg)
}

#[derive(Serialize)]
struct ModelRecord {
    dims: ModelDims,
    seed: u64,
    checksum: String,
}

#[derive(Serialize)]
struct GuideRecord<'a> {
    prompt: &'a str,
    config: &'a GuidanceConfig,
    model: ModelRecord,
    direction: DirectionReport,
    final_latent_checksum: String,
    final_loss: LossBreakdown,
    final_scores: DiagnosticScores,
}

fn describe(report: &DirectionReport) -> String {
    format!(
        "direction check: object separation {:?}, attribute binding {:?}, outside separation {:?}, away from uniform {:?}",
        report.object_separation,
        report.attribute_binding,
        report.outside_separation,
        report.away_from_uniform
    )
}

/// Moves every entry of `staging` into `dest`, replacing same-named entries.
fn publish(staging: &Path, dest: &Path) -> Result<(), CliError> {
    for entry in fs::read_dir(staging).map_err(|e| io_error(staging, e))? {
        let entry = entry.map_err(|e| io_error(staging, e))?;
        let target = dest.join(entry.file_name());
        if target.is_dir() {
            fs::remove_dir_all(&target).map_err(|e| io_error(&target, e))?;
        } else if target.exists() {
            fs::remove_file(&target).map_err(|e| io_error(&target, e))?;
        }
        fs::rename(entry.path(), &target).map_err(|e| io_error(&target, e))?;
    }
    Ok(())
}

pub fn guide(args: &GuideArgs) -> Result<(), CliError> {
    let parsed = parse_prompt(&args.prompt, &lexicon(args.lexicon.as_deref())?)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let mut cfg = loss_config(&args.loss)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(t) = args.steps {
        cfg.steps = t;
        if args.k.is_none() && args.loss.config.is_none() {
            cfg.intervention_steps = cfg.intervention_steps.min(t);
        }
    }
    if let Some(k) = args.k {
        cfg.intervention_steps = k;
    }
    if let Some(a) = args.alpha {
        cfg.step_size = a;
    }
    if args.step_decay {
        cfg.step_decay = true;
    }
    cfg.validate().map_err(engine_error)?;

    let dims = ModelDims {
        height: args.size,
        width: args.size,
        channels: args.channels,
        ..ModelDims::default()
    };
    let model = ToyModel::new(dims, args.model_seed).map_err(engine_error)?;
    let direction = direction_check(&cfg.weights);
    if args.direction_check {
        eprintln!("{}", describe(&direction));
    }

    let out = sample(&model, &parsed, &cfg).map_err(engine_error)?;
    let exported = export_precision(&out.maps).map_err(|e| CliError::Engine(e.to_string()))?;
    let smoothed = exported.smoothed(cfg.smoothing);
    let final_loss = total_loss(&parsed, &smoothed, &cfg.weights, &cfg.pac)
        .map_err(|e| CliError::Engine(e.to_string()))?;
    let final_scores = score(&smoothed, &parsed).map_err(|e| CliError::Engine(e.to_string()))?;
    let record = GuideRecord {
        prompt: &args.prompt,
        config: &cfg,
        model: ModelRecord {
            dims,
            seed: args.model_seed,
            checksum: model.checksum(),
        },
        direction,
        final_latent_checksum: out.state.checksum(),
        final_loss,
        final_scores,
    };

    fs::create_dir_all(&args.out_dir).map_err(|e| io_error(&args.out_dir, e))?;
    let staging = tempfile::Builder::new()
        .prefix(".pacattn-")
        .tempdir_in(&args.out_dir)
        .map_err(|e| io_error(&args.out_dir, e))?;
    let write = |name: &str, text: String| -> Result<(), CliError> {
        let path = staging.path().join(name);
        fs::write(&path, text).map_err(|e| io_error(&path, e))
    };
    write("trace.jsonl", out.trace.to_jsonl())?;
    write("scores.json", to_json(&record))?;
    write("config.json", to_json(&cfg))?;
    write("parse.json", parsed.to_json() + "\n")?;
    write_bundle(&staging.path().join("bundle"), &out.maps, &parsed)
        .map_err(|e| CliError::Data(e.to_string()))?;
    publish(staging.path(), &args.out_dir)?;

    eprintln!(
        "wrote {} ({} steps, final total {:.6}, separation {:.4}, binding {:.4})",
        args.out_dir.display(),
        out.trace.records.len(),
        record.final_loss.total,
        record.final_scores.separation,
        record.final_scores.binding
    );
    Ok(())
}

#[derive(Serialize)]
struct AuditRecord {
    loss: LossBreakdown,
    scores: DiagnosticScores,
}

pub fn audit(bundle: &Path, parse_path: &Path, flags: &LossFlags) -> Result<(), CliError> {
    let report = pacattn::bundle::validate_bundle(bundle);
    if !report.valid {
        return Err(CliError::Data(format!("invalid bundle:\n{}", report.summary())));
    }
    let text = fs::read_to_string(parse_path).map_err(|e| io_error(parse_path, e))?;
    let parsed = ParsedPrompt::from_json(&text)
        .map_err(|e| CliError::Data(format!("{}: {e}", parse_path.display())))?;
    let (manifest, set) = load_bundle(bundle).map_err(|e| CliError::Data(e.to_string()))?;
    let problems = alignment_problems(&manifest, &parsed);
    if !problems.is_empty() {
        return Err(CliError::Data(format!(
            "bundle does not match parse:\n{}",
            problems.join("\n")
        )));
    }
    let cfg = loss_config(flags)?;
    cfg.weights.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    cfg.pac.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    if cfg.smoothing.is_nan() || cfg.smoothing <= 0.0 {
        return Err(CliError::Usage(format!("smoothing must be positive, got {}", cfg.smoothing)));
    }
    let smoothed = set.smoothed(cfg.smoothing);
    let loss = total_loss(&parsed, &smoothed, &cfg.weights, &cfg.pac)
        .map_err(|e| CliError::Data(e.to_string()))?;
    let scores = score(&smoothed, &parsed).map_err(|e| CliError::Data(e.to_string()))?;
    print!("{}", to_json(&AuditRecord { loss, scores }));
    Ok(())
}

pub fn sweep(spec_path: &Path, format: &str, out: Option<&Path>) -> Result<(), CliError> {
    let format: ReportFormat = format.parse().map_err(|e: EvalError| CliError::Usage(e.to_string()))?;
    let text = fs::read_to_string(spec_path).map_err(|e| io_error(spec_path, e))?;
    let spec: SweepSpec = serde_json::from_str(&text)
        .map_err(|e| CliError::Data(format!("{}: {e}", spec_path.display())))?;
    let report = run_sweep(&spec).map_err(|e| match e {
        EvalError::InvalidSpec(_) | EvalError::UnknownFormat(_) => CliError::Usage(e.to_string()),
        EvalError::Engine(e) => engine_error(e),
        other => CliError::Engine(other.to_string()),
    })?;
    let bytes = emit_report(&report, format);
    match out {
        Some(path) => fs::write(path, &bytes).map_err(|e| io_error(path, e))?,
        None => std::io::stdout()
            .write_all(&bytes)
            .map_err(|e| CliError::Data(e.to_string()))?,
    }
    let failed = report.failed_cells();
    if failed > 0 {
        for cell in report.cells.iter().filter(|c| !c.ok()) {
            eprintln!(
                "cell {}={} prompt {:?} seed {}: {}",
                report.axis.name(),
                cell.value,
                cell.prompt,
                cell.seed,
                cell.error.as_deref().unwrap_or_default()
            );
        }
        return Err(CliError::Engine(format!(
            "{failed} of {} sweep cells failed",
            report.cells.len()
        )));
    }
    Ok(())
}

pub fn render(bundle: &Path, token: Option<&str>, out: &Path) -> Result<(), CliError> {
    let (manifest, set) = load_bundle(bundle).map_err(|e| CliError::Data(e.to_string()))?;
    let selected: Vec<usize> = match token {
        None => (0..set.len()).collect(),
        Some(t) => {
            let found = match t.parse::<usize>() {
                Ok(i) if i < set.len() => Some(i),
                Ok(_) => None,
                Err(_) => manifest.tokens.iter().find(|m| m.text == t).map(|m| m.index),
            };
            vec![found.ok_or_else(|| CliError::Usage(format!("unknown token {t:?}")))?]
        }
    };
    fs::create_dir_all(out).map_err(|e| io_error(out, e))?;
    for i in selected {
        let path: PathBuf = out.join(format!("token_{i:03}.pgm"));
        let map = set.get(i).expect("selected index is in range");
        fs::write(&path, pgm::render(map)).map_err(|e| io_error(&path, e))?;
        println!("{}", path.display());
    }
    Ok(())
}

pub fn validate_bundle(bundle: &Path) -> Result<(), CliError> {
    let report = pacattn::bundle::validate_bundle(bundle);
    print!("{}", to_json(&report));
    if report.valid {
        Ok(())
    } else {
        Err(CliError::Data(format!("invalid bundle:\n{}", report.summary())))
    }
}

/// `value` with `digits` significant digits in positional notation.
pub fn significant(value: f64, digits: usize) -> String {
    if value == 0.0 || !value.is_finite() {
        return format!("{value}");
    }
    let magnitude = value.abs().log10().floor() as i64;
    let decimals = (digits as i64 - 1 - magnitude).max(0) as usize;
    format!("{value:.decimals$}")
}

pub fn pac_bound(risk: f64, kl: f64, n: u64, delta: f64) -> Result<(), CliError> {
    let cfg = PacConfig::new(n, delta);
    let bound = pac_bayes_bound(risk, kl, &cfg).map_err(|e| CliError::Usage(e.to_string()))?;
    println!("{}", significant(bound, 12));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn significant_digits() {
        assert_eq!(significant(0.05497337903447857, 12), "0.0549733790345");
        assert_eq!(significant(1234.5678, 6), "1234.57");
        assert_eq!(significant(0.0, 12), "0");
    }
}
