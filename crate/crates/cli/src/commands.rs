use std::collections::BTreeMap;
use std::path::Path;

use sbvqa::corruption::{corrupt_corpus, parse_levels, CorpusItem, CorruptOptions, NoiseBank, NoiseLevel};
use sbvqa::dataset::{
    generate_synthetic_dataset, load_manifest, records_in_split, zero_shot_split, Split, SyntheticSpec,
};
use sbvqa::harness::{run_evaluate, run_sweep, run_train, RunConfig};
use sbvqa::text::{read_transcripts, wer_corpus};

use crate::error::{CliError, Result};
use crate::{resolve_seed, CorruptArgs, GenDataArgs, RunArgs, WerArgs, ZsSplitArgs};

fn print_json<T: serde::Serialize>(value: &T) {
    emit!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

pub fn gen_data(a: GenDataArgs) -> Result<()> {
    let spec = SyntheticSpec {
        train: a.train,
        val: a.val,
        test_dev: a.test_dev,
        image_dim: a.image_dim,
        seed: resolve_seed(a.seed)?,
        answer_source: a.answer_source,
        noise_clips: a.noise_clips,
        noise_secs: a.noise_secs,
        ..SyntheticSpec::default()
    };
    if !(a.noise_secs.is_finite() && a.noise_secs > 0.0) {
        return Err(CliError::Invalid("--noise-secs must be positive".into()));
    }
    let ds = generate_synthetic_dataset(&spec)?;
    ds.write(&a.out)?;
    emit!(
        "wrote {} questions ({} train, {} val, {} test-dev), {} images and {} noise clips to {}",
        ds.records.len(),
        a.train,
        a.val,
        a.test_dev,
        ds.features.len(),
        ds.noise.len(),
        a.out.display()
    );
    Ok(())
}

pub fn corrupt(a: CorruptArgs) -> Result<()> {
    let levels = if a.levels.is_empty() {
        NoiseLevel::sweep().into_iter().filter(|l| l.value() > 0.0).collect()
    } else {
        a.levels
    };
    let records = load_manifest(&a.manifest)?.records;
    let base = a
        .audio_dir
        .clone()
        .unwrap_or_else(|| a.manifest.parent().map(Path::to_path_buf).unwrap_or_default());
    let items: Vec<CorpusItem> = records
        .iter()
        .map(|r| CorpusItem {
            question_id: r.question_id,
            audio_path: r.resolve_audio(&base),
        })
        .collect();
    let bank = NoiseBank::load(&a.noise_bank)?;
    let options = CorruptOptions {
        normalization: a.normalization,
    };
    let summary = corrupt_corpus(&items, &bank, &levels, resolve_seed(a.seed)?, &a.out, options)?;
    emit!(
        "wrote {} files for {} questions at {} level(s) to {}",
        summary.files_written,
        items.len(),
        levels.len(),
        a.out.display()
    );
    if summary.silent_inputs > 0 {
        log::warn!("{} question(s) had silent speech or noise", summary.silent_inputs);
    }
    Ok(())
}

fn config_sets_seed(text: &str) -> bool {
    text.lines().any(|l| {
        l.split('#')
            .next()
            .and_then(|l| l.split_once('='))
            .is_some_and(|(k, _)| k.trim() == "seed")
    })
}

/// Config file, then flags, then `--set` overrides.
pub fn run_config(a: &RunArgs) -> Result<RunConfig> {
    let (mut cfg, seeded) = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Invalid(format!("{}: {e}", p.display())))?;
            let cfg = RunConfig::parse(&text).map_err(|e| CliError::Invalid(format!("{}: {e}", p.display())))?;
            (cfg, config_sets_seed(&text))
        }
        None => (RunConfig::default(), false),
    };
    if let Some(m) = a.model {
        cfg.model = m;
    }
    cfg.blind |= a.blind;
    let paths = &mut cfg.paths;
    for (slot, flag) in [
        (&mut paths.manifest, &a.manifest),
        (&mut paths.features, &a.features),
        (&mut paths.audio_dir, &a.audio_dir),
        (&mut paths.noise_bank, &a.noise_bank),
        (&mut paths.transcripts, &a.transcripts),
        (&mut paths.corrupted_dir, &a.corrupted_dir),
        (&mut paths.out_dir, &a.out),
    ] {
        if flag.is_some() {
            slot.clone_from(flag);
        }
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(b) = a.batch_size {
        cfg.train.batch_size = b;
    }
    if let Some(lr) = a.lr {
        cfg.train.adam.lr = lr;
    }
    if let Some(l) = &a.levels {
        cfg.noise_levels = parse_levels(l)?;
    }
    if a.seed.is_some() || !seeded {
        cfg.train.seed = resolve_seed(a.seed)?;
    }
    for kv in &a.sets {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Invalid(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v.trim()).map_err(CliError::Invalid)?;
    }
    cfg.train.validate()?;
    Ok(cfg)
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    print_json(&run_train(cfg)?);
    Ok(())
}

pub fn evaluate(cfg: &RunConfig, level: NoiseLevel) -> Result<()> {
    print_json(&run_evaluate(cfg, level)?);
    Ok(())
}

pub fn sweep(cfg: &RunConfig) -> Result<()> {
    emit!("{}", run_sweep(cfg)?.to_csv().trim_end());
    Ok(())
}

#[derive(serde::Serialize)]
struct WerReport {
    questions: usize,
    missing_hypotheses: usize,
    #[serde(flatten)]
    breakdown: sbvqa::text::WerBreakdown,
}

pub fn wer(a: WerArgs) -> Result<()> {
    let mut refs = BTreeMap::new();
    for r in read_transcripts(&a.reference)? {
        if refs.insert(r.question_id, r.text).is_some() {
            return Err(CliError::Invalid(format!(
                "{}: question {} appears twice",
                a.reference.display(),
                r.question_id
            )));
        }
    }
    let mut hyps = BTreeMap::new();
    for h in read_transcripts(&a.hyp)? {
        if let Some(level) = a.level {
            if (h.noise_level - level.value()).abs() > 1e-9 {
                continue;
            }
        }
        if hyps.insert(h.question_id, h.text).is_some() {
            return Err(CliError::Invalid(format!(
                "{}: question {} has several hypotheses; pick one noise level with --level",
                a.hyp.display(),
                h.question_id
            )));
        }
    }
    let mut missing = 0;
    let pairs: Vec<(&str, &str)> = refs
        .iter()
        .map(|(id, r)| {
            let h = hyps.get(id).map_or_else(
                || {
                    missing += 1;
                    ""
                },
                String::as_str,
            );
            (r.as_str(), h)
        })
        .collect();
    if missing > 0 {
        log::warn!("{missing} reference(s) have no hypothesis and are scored as empty");
    }
    let unmatched = hyps.keys().filter(|id| !refs.contains_key(id)).count();
    if unmatched > 0 {
        log::warn!("{unmatched} hypothesis(es) have no reference and are ignored");
    }
    print_json(&WerReport {
        questions: pairs.len(),
        missing_hypotheses: missing,
        breakdown: wer_corpus(&pairs)?,
    });
    Ok(())
}

pub fn zs_split(a: ZsSplitArgs) -> Result<()> {
    let records = load_manifest(&a.manifest)?.records;
    let spec = zero_shot_split(
        &records_in_split(&records, Split::Train),
        &records_in_split(&records, Split::Val),
    );
    let body = serde_json::to_string_pretty(&spec).expect("serializable") + "\n";
    std::fs::write(&a.out, body).map_err(|e| CliError::Runtime(format!("{}: {e}", a.out.display())))?;
    let n = spec.get(sbvqa::dataset::SplitSpec::ZERO_SHOT).map_or(0, <[u64]>::len);
    emit!("{n} zero-shot questions written to {}", a.out.display());
    Ok(())
}
