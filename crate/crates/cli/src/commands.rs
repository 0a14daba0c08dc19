use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;
use voiceind::audit::{self, BenchOptions, GridOptions};
use voiceind::embedding::{self, format_voiceprint};
use voiceind::release::{self, ReleaseOptions};
use voiceind::text::fmt12;
use voiceind::{
    PassthroughSynthesizer, PrivacyBudget, ProtectedUtterance, ReleaseModel, SeededRng, Voiceprint,
    VoiceprintDatabase, DEFAULT_DIM,
};

use crate::args::*;

/// Published feature-level online times, for scale only.
const REFERENCE_TIMINGS: [(usize, f64); 3] = [(100, 0.4802), (1000, 29.0959), (10000, 2710.9289)];

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{}: {source}", path.display())]
    File {
        path: PathBuf,
        #[source]
        source: voiceind::Error,
    },
    #[error(transparent)]
    Core(#[from] voiceind::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::File { source, .. } => match source {
                voiceind::Error::Io(e) if e.kind() == io::ErrorKind::NotFound => "file-not-found",
                other => other.kind(),
            },
            CliError::Core(e) => e.kind(),
            CliError::Io(_) => "io",
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn at(path: &Path) -> impl Fn(voiceind::Error) -> CliError + '_ {
    move |source| CliError::File {
        path: path.to_path_buf(),
        source,
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| at(path)(e.into()))
}

fn load_db(path: &Path, dim: Option<usize>) -> Result<VoiceprintDatabase> {
    let reader = open(path)?;
    match dim {
        Some(d) => embedding::load_database(reader, d),
        None => embedding::load_database_auto(reader, DEFAULT_DIM),
    }
    .map_err(at(path))
}

/// Stdout, or a buffered file.
fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| at(p)(e.into()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn budget(epsilon: f64) -> Result<PrivacyBudget> {
    Ok(PrivacyBudget::new(epsilon)?)
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Distance(a) => distance(cli, a),
        Command::Perturb(a) => perturb(cli, a),
        Command::Release(r) => match &r.action {
            Some(ReleaseAction::BuildModel(a)) => build_model(cli, a),
            None => release(cli, &r.args),
        },
        Command::Audit(a) => audit(cli, a),
        Command::Attack(a) => attack(cli, a),
        Command::Experiment(a) => experiment(cli, a),
        Command::Bench(a) => bench(cli, a),
        Command::GenPopulation(a) => gen_population(cli, a),
    }
}

fn distance(cli: &Cli, a: &DistanceArgs) -> Result<()> {
    let db = load_db(&a.db, cli.dim)?;
    let mut out = output(a.out.as_deref())?;
    if a.matrix {
        voiceind::distance_matrix(&db).write_csv(&mut out)?;
    } else {
        let (Some(x), Some(y)) = (&a.a, &a.b) else {
            return Err(CliError::Usage("give --a and --b, or --matrix".into()));
        };
        let lookup = |id: &str| {
            db.get(id)
                .ok_or_else(|| CliError::Usage(format!("no record `{id}` in {}", a.db.display())))
        };
        let d = voiceind::angular_distance(lookup(x)?, lookup(y)?)?;
        writeln!(out, "{}", fmt12(d))?;
    }
    out.flush()?;
    Ok(())
}

fn perturb(cli: &Cli, a: &PerturbArgs) -> Result<()> {
    let db = load_db(&a.db, cli.dim)?;
    let x0: Voiceprint = match (&a.id, &a.vector_file) {
        (Some(id), _) => db
            .get(id)
            .cloned()
            .ok_or_else(|| CliError::Usage(format!("no record `{id}` in {}", a.db.display())))?,
        (None, Some(path)) => {
            let queries = load_db(path, Some(db.dim()))?;
            match &a.vector_id {
                Some(id) => queries
                    .get(id)
                    .cloned()
                    .ok_or_else(|| CliError::Usage(format!("no record `{id}` in {}", path.display())))?,
                None => queries.record(0).clone(),
            }
        }
        (None, None) => return Err(CliError::Usage("give --id or --vector-file".into())),
    };
    let dist = voiceind::build_distribution(&x0, &db, budget(a.epsilon)?)?;
    let k = dist.sample_index(&mut SeededRng::new(cli.seed));
    let mut out = output(None)?;
    writeln!(out, "{}\t{}", dist.candidate_ids()[k], fmt12(dist.probabilities()[k]))?;
    out.flush()?;
    if let Some(path) = &a.dump_distribution {
        let mut w = output(Some(path))?;
        writeln!(w, "candidate_id,distance,probability")?;
        for ((id, d), p) in dist
            .candidate_ids()
            .iter()
            .zip(dist.center_distance())
            .zip(dist.probabilities())
        {
            writeln!(w, "{id},{},{}", fmt12(*d), fmt12(*p))?;
        }
        w.flush()?;
    }
    Ok(())
}

fn build_model(cli: &Cli, a: &BuildModelArgs) -> Result<()> {
    let db = Arc::new(load_db(&a.db, cli.dim)?);
    let model = release::build_release_model(db, budget(a.epsilon)?, a.built_at);
    let mut w = output(Some(&a.out))?;
    model.write_to(&mut w).map_err(at(&a.out))?;
    w.flush()?;
    Ok(())
}

fn release(cli: &Cli, a: &ReleaseArgs) -> Result<()> {
    let mode = a
        .mode
        .ok_or_else(|| CliError::Usage("release needs --mode feature|model (or the build-model subcommand)".into()))?;
    let db_path = a
        .db
        .as_deref()
        .ok_or_else(|| CliError::Usage("release needs --db".into()))?;
    if a.strip_provenance && a.provenance.is_some() {
        return Err(CliError::Usage("--provenance conflicts with --strip-provenance".into()));
    }
    let model_path = match mode {
        Mode::Model => Some(
            a.model
                .as_deref()
                .ok_or_else(|| CliError::Usage("--mode model requires --model <path>".into()))?,
        ),
        Mode::Feature => {
            if a.model.is_some() {
                return Err(CliError::Usage("--model is only valid with --mode model".into()));
            }
            None
        }
    };

    let db = Arc::new(load_db(db_path, cli.dim)?);
    let voiceprints: Vec<Voiceprint> = match &a.utterances {
        Some(path) => load_db(path, Some(db.dim()))?.records().to_vec(),
        None => db.records().to_vec(),
    };
    let contents = match &a.content {
        Some(path) => embedding::load_content_sidecar(open(path)?).map_err(at(path))?,
        None => HashMap::new(),
    };
    let utterances = embedding::utterances_from(&voiceprints, &contents);
    let rng = SeededRng::new(cli.seed);
    let options = ReleaseOptions { sticky: a.sticky };

    let released: Vec<ProtectedUtterance> = match model_path {
        None => {
            let eps = a
                .epsilon
                .ok_or_else(|| CliError::Usage("--mode feature requires --epsilon".into()))?;
            release::release_feature_level(&utterances, &db, budget(eps)?, &PassthroughSynthesizer, &rng, options)?
        }
        Some(path) => {
            let model = ReleaseModel::read_from(open(path)?, Arc::clone(&db)).map_err(at(path))?;
            if let Some(eps) = a.epsilon {
                if eps.to_bits() != model.epsilon().epsilon().to_bits() {
                    return Err(CliError::Usage(format!(
                        "--epsilon {eps} does not match the model's epsilon {}",
                        model.epsilon().epsilon()
                    )));
                }
            }
            release::release_model_level(&utterances, &model, &PassthroughSynthesizer, &rng, options)?
        }
    };

    let mut out = output(a.out.as_deref())?;
    writeln!(out, "#% n={} dim={}", released.len(), db.dim())?;
    for u in &released {
        let v = u.released_voiceprint.with_id(&u.id)?;
        writeln!(out, "{}", format_voiceprint(&v))?;
    }
    out.flush()?;

    if let Some(path) = &a.provenance {
        let mut w = output(Some(path))?;
        writeln!(w, "utterance_id,candidate_id,probability")?;
        for u in &released {
            writeln!(w, "{},{},{}", u.id, u.source_candidate_id, fmt12(u.probability))?;
        }
        w.flush()?;
    }
    if let Some(path) = &a.content_out {
        let mut w = output(Some(path))?;
        embedding::write_content_sidecar(&mut w, released.iter().map(|u| (u.id.as_str(), u.content.as_slice())))?;
        w.flush()?;
    }
    Ok(())
}

fn load_prior(path: &Path, db: &VoiceprintDatabase) -> Result<Vec<f64>> {
    let mut prior = vec![f64::NAN; db.len()];
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |message: String| at(path)(voiceind::Error::Parse { line: i + 1, message });
        let mut fields = line.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty());
        let (Some(id), Some(p), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(bad("expected `<id> <probability>`".into()));
        };
        let slot = db.position(id).ok_or_else(|| bad(format!("unknown id `{id}`")))?;
        prior[slot] = p.parse().map_err(|_| bad(format!("malformed probability `{p}`")))?;
    }
    if let Some(i) = prior.iter().position(|p| p.is_nan()) {
        return Err(CliError::Usage(format!(
            "prior in {} has no entry for `{}`",
            path.display(),
            db.record(i).id()
        )));
    }
    Ok(prior)
}

fn audit(cli: &Cli, a: &AuditArgs) -> Result<()> {
    let db = load_db(&a.db, cli.dim)?;
    let eps = budget(a.epsilon)?;
    let report = audit::verify_voice_ind(&db, eps, a.tolerance, a.cap)?;
    let bayes = if a.bayes || a.prior.is_some() {
        let prior = match &a.prior {
            Some(path) => load_prior(path, &db)?,
            None => vec![1.0 / db.len() as f64; db.len()],
        };
        Some(audit::bayes_bound_check(&prior, &db, eps, a.tolerance, a.cap)?)
    } else {
        None
    };
    let mut out = output(None)?;
    writeln!(out, "{report}")?;
    if let Some(b) = &bayes {
        writeln!(out, "\nprior/posterior audit")?;
        writeln!(out, "{b}")?;
    }
    out.flush()?;
    if let Some(path) = &a.json {
        let value = serde_json::json!({ "voice_ind": report, "bayes": bayes });
        let mut w = output(Some(path))?;
        serde_json::to_writer_pretty(&mut w, &value).map_err(io::Error::from)?;
        writeln!(w)?;
        w.flush()?;
    }
    Ok(())
}

fn attack(cli: &Cli, a: &AttackArgs) -> Result<()> {
    let original = load_db(&a.db, cli.dim)?;
    let released = load_db(&a.released, Some(original.dim()))?;
    let result = audit::identification_attack(&original, released.records().iter().map(|r| (r.id(), r)))?;
    let mut out = output(None)?;
    writeln!(out, "{:<12}{}", "attack", result.attack)?;
    writeln!(out, "{:<12}{}", "trials", result.trials)?;
    writeln!(out, "{:<12}{}", "correct", result.correct)?;
    writeln!(out, "{:<12}{}", "accuracy", fmt12(result.accuracy))?;
    out.flush()?;
    Ok(())
}

fn experiment(cli: &Cli, a: &ExperimentArgs) -> Result<()> {
    let population = match &a.population {
        Some(path) => load_db(path, cli.dim)?,
        None => voiceind::generate_population(&voiceind::PopulationSpec {
            dim: cli.dim.unwrap_or(DEFAULT_DIM),
            seed: SeededRng::new(cli.seed).child(&[u64::MAX]).seed(),
            ..Default::default()
        })?,
    };
    let rows = audit::run_experiment_grid(
        &population,
        &a.n_values,
        &a.eps_values,
        a.trials,
        &SeededRng::new(cli.seed),
        &GridOptions { timing: a.timing },
    )?;
    let mut out = output(a.out.as_deref())?;
    if a.summary {
        writeln!(out, "n,epsilon,trials,mean_mse,se_mse,mean_acc,se_acc")?;
        for s in audit::summarize_grid(&rows) {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                s.n,
                fmt12(s.epsilon),
                s.trials,
                fmt12(s.mean_mse),
                fmt12(s.se_mse),
                fmt12(s.mean_acc),
                fmt12(s.se_acc)
            )?;
        }
    } else {
        audit::write_experiment_csv(&mut out, &rows)?;
    }
    out.flush()?;
    Ok(())
}

fn bench(cli: &Cli, a: &BenchArgs) -> Result<()> {
    let rows = audit::bench_perturbation(
        &a.sizes,
        budget(a.epsilon)?,
        &SeededRng::new(cli.seed),
        &BenchOptions {
            dim: cli.dim.unwrap_or(DEFAULT_DIM),
            model_cap: a.model_cap,
            repeats: a.repeats,
        },
    )?;
    let mut out = output(None)?;
    write!(out, "{}", audit::format_bench_table(&rows))?;
    let reference: Vec<String> = REFERENCE_TIMINGS
        .iter()
        .map(|(n, s)| format!("n = {n}: {s}s"))
        .collect();
    writeln!(out, "\nPublished feature-level reference (other hardware): {}", reference.join(", "))?;
    for pair in rows.windows(2) {
        writeln!(
            out,
            "feature-level time ratio n={} -> n={}: {:.2}",
            pair[0].n,
            pair[1].n,
            pair[1].feature_online_s / pair[0].feature_online_s
        )?;
    }
    out.flush()?;
    if let Some(path) = &a.json {
        let mut w = output(Some(path))?;
        serde_json::to_writer_pretty(&mut w, &rows).map_err(io::Error::from)?;
        writeln!(w)?;
        w.flush()?;
    }
    Ok(())
}

fn gen_population(cli: &Cli, a: &GenPopulationArgs) -> Result<()> {
    let db = voiceind::generate_population(&voiceind::PopulationSpec {
        speakers: a.speakers,
        utterances_per_speaker: a.utterances,
        dim: cli.dim.unwrap_or(DEFAULT_DIM),
        concentration: a.concentration,
        seed: cli.seed,
    })?;
    let mut out = output(a.out.as_deref())?;
    db.write_to(&mut out)?;
    out.flush()?;
    Ok(())
}
