use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use lesionbench_core::nifti::{write_volume, DatumKind, Samples, VolumeHeader};
use lesionbench_core::{
    extract_lesions_with, generate_phantom, majority_vote, pairwise_dice_matrix, perturb, read_label_volume,
    score_case, write_label_volume, write_scalar_volume, Connectivity, DetectionParams, EnsembleMode, FilterStage,
    Label, LabelMap, LabelVolume, PerturbSpec, PhantomSpec, ScoreOptions,
};
use lesionbench_cli::views::load_class_map;
use lesionbench_cli::{
    compare_tables, default_jobs, ensemble_views, read_metric_column, run_evaluation, run_preprocess,
    PreprocessRequest, RunManifest, ViewSpec,
};

#[derive(Parser)]
#[command(name = "lesionbench", version, about = "Lesion segmentation evaluation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic label phantom from a JSON spec.
    Phantom {
        spec: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Overrides the spec's seed (default 0).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Apply simulated segmentation errors to a label volume.
    Perturb {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// JSON perturbation spec; flags below override its fields.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        dilate_prob: Option<f64>,
        #[arg(long)]
        erode_prob: Option<f64>,
        #[arg(long)]
        drop_prob: Option<f64>,
        #[arg(long)]
        add_fp: Option<usize>,
        #[arg(long)]
        jitter_vox: Option<usize>,
        #[arg(long)]
        label: Option<Label>,
    },
    /// Resample to isotropic voxels, mask and standardize images.
    Preprocess {
        images: Vec<PathBuf>,
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(short, long)]
        output_dir: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        spacing: f64,
        #[arg(long, default_value = "case")]
        case_id: String,
    },
    /// List the lesions of a label volume as JSON.
    Components {
        input: PathBuf,
        #[command(flatten)]
        lesion: LesionArgs,
        /// Also write a volume of lesion ids (0 = none).
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Average logits over views and write the argmax segmentation.
    Ensemble {
        /// Logit files, each `path[@<axis order>][@flip]`, e.g. `v2.nii.gz@zxy@flip`.
        #[arg(required = true)]
        views: Vec<ViewSpec>,
        #[arg(short, long)]
        output: PathBuf,
        /// Also write the averaged logits.
        #[arg(long)]
        logits_out: Option<PathBuf>,
        #[arg(long)]
        class_map: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Mode::Logits)]
        mode: Mode,
    },
    /// Score one prediction against its ground truth; prints the JSON report.
    Score {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[command(flatten)]
        lesion: LesionArgs,
        #[command(flatten)]
        rule: RuleArgs,
        /// Extra structures for the Dice table, comma separated.
        #[arg(long, value_delimiter = ',')]
        dice_labels: Vec<Label>,
        #[arg(long, default_value_t = lesionbench_core::report::DEFAULT_AUDIT_OVERLAP_PCT)]
        audit_overlap: f64,
        #[arg(long)]
        label_map: Option<PathBuf>,
        #[arg(long, default_value = "case")]
        case_id: String,
        #[arg(long, default_value = "method")]
        method: String,
        /// Append the score row to this CSV (header written when new).
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Pairwise Dice between raters, optionally with their majority vote.
    Raters {
        #[arg(required = true, num_args = 2..)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value_t = 1)]
        label: Label,
        /// Matrix CSV; stdout when absent.
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(long)]
        consensus: Option<PathBuf>,
    },
    /// Wilcoxon signed-rank comparison of two per-case score tables.
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, default_value = "dice")]
        metric: String,
        /// Keep only rows of this method in table A.
        #[arg(long)]
        method_a: Option<String>,
        #[arg(long)]
        method_b: Option<String>,
    },
    /// Evaluate a cohort manifest and write reports.
    Report {
        manifest: PathBuf,
        #[arg(short, long, env = "LESIONBENCH_JOBS")]
        jobs: Option<usize>,
        /// Overrides the manifest's output directory.
        #[arg(short, long)]
        output_dir: Option<PathBuf>,
    },
}

#[derive(Args)]
struct LesionArgs {
    #[arg(long, default_value_t = 1)]
    label: Label,
    #[arg(long, default_value_t = lesionbench_core::lesion::DEFAULT_MIN_VOLUME_MM3)]
    min_volume: f64,
    /// 6, 18 or 26.
    #[arg(long, default_value_t = 18)]
    connectivity: u32,
}

#[derive(Args)]
struct RuleArgs {
    #[arg(long, default_value_t = lesionbench_core::detection::DEFAULT_ALPHA_PCT)]
    alpha: f64,
    #[arg(long, default_value_t = lesionbench_core::detection::DEFAULT_BETA_PCT)]
    beta: f64,
    #[arg(long, default_value_t = lesionbench_core::detection::DEFAULT_GAMMA_PCT)]
    gamma: f64,
    /// Match filtered lesions against unfiltered components of the other side.
    #[arg(long)]
    filter_after_matching: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Logits,
    Probabilities,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn read_labels(path: &Path, names: Option<&LabelMap>) -> Result<LabelVolume> {
    read_label_volume(path, names).with_context(|| format!("reading {}", path.display()))
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Phantom { spec, output, seed } => {
            let mut spec: PhantomSpec = read_json(&spec)?;
            if let Some(s) = seed {
                spec.seed = s;
            }
            write_label_volume(&generate_phantom(&spec)?, &output)?;
        }
        Command::Perturb {
            input,
            output,
            spec,
            seed,
            dilate_prob,
            erode_prob,
            drop_prob,
            add_fp,
            jitter_vox,
            label,
        } => {
            let mut p: PerturbSpec = match spec {
                Some(path) => read_json(&path)?,
                None => PerturbSpec::default(),
            };
            p.seed = seed.unwrap_or(p.seed);
            p.dilate_prob = dilate_prob.unwrap_or(p.dilate_prob);
            p.erode_prob = erode_prob.unwrap_or(p.erode_prob);
            p.drop_prob = drop_prob.unwrap_or(p.drop_prob);
            p.add_fp = add_fp.unwrap_or(p.add_fp);
            p.jitter_vox = jitter_vox.unwrap_or(p.jitter_vox);
            p.label = label.unwrap_or(p.label);
            let v = read_labels(&input, None)?;
            write_label_volume(&perturb(&v, &p)?, &output)?;
        }
        Command::Preprocess {
            images,
            mask,
            output_dir,
            spacing,
            case_id,
        } => {
            if images.is_empty() {
                bail!("no images given");
            }
            let outputs = run_preprocess(&PreprocessRequest {
                case_id,
                images,
                mask,
                output_dir,
                spacing_mm: spacing,
            })?;
            for p in outputs {
                println!("{}", p.display());
            }
        }
        Command::Components { input, lesion, output } => {
            let v = read_labels(&input, None)?;
            let conn = Connectivity::from_count(lesion.connectivity)?;
            let set = extract_lesions_with(&v, &[lesion.label], lesion.min_volume, conn);
            if let Some(out) = output {
                let ids: Vec<i32> = set.id_map().iter().map(|&i| i as i32).collect();
                let header = VolumeHeader::for_grid(v.grid(), 1, DatumKind::I32);
                write_volume(&header, &Samples::I32(ids), &out)?;
            }
            print_json(&set.summaries())?;
        }
        Command::Ensemble {
            views,
            output,
            logits_out,
            class_map,
            mode,
        } => {
            let map = load_class_map(class_map.as_deref())?;
            let mode = match mode {
                Mode::Logits => EnsembleMode::Logits,
                Mode::Probabilities => EnsembleMode::Probabilities,
            };
            let (mean, labels) = ensemble_views(&views, map.as_ref(), mode)?;
            write_label_volume(&labels, &output)?;
            if let Some(p) = logits_out {
                write_scalar_volume(mean.volume(), &p)?;
            }
        }
        Command::Score {
            gt,
            pred,
            lesion,
            rule,
            dice_labels,
            audit_overlap,
            label_map,
            case_id,
            method,
            csv,
        } => {
            let names = label_map.map(|p| LabelMap::from_json_file(&p)).transpose()?;
            let g = read_labels(&gt, names.as_ref())?;
            let p = read_labels(&pred, names.as_ref())?;
            let options = ScoreOptions {
                lesion_label: lesion.label,
                dice_labels,
                params: DetectionParams {
                    alpha_pct: rule.alpha,
                    beta_pct: rule.beta,
                    gamma_pct: rule.gamma,
                    min_volume_mm3: lesion.min_volume,
                    connectivity: Connectivity::from_count(lesion.connectivity)?,
                    filter_stage: if rule.filter_after_matching {
                        FilterStage::AfterMatching
                    } else {
                        FilterStage::BeforeMatching
                    },
                },
                audit_overlap_pct: audit_overlap,
            };
            let report = score_case(&case_id, &method, &g, &p, &options)?;
            if let Some(path) = csv {
                let fresh = !path.exists();
                let file = std::fs::OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(&path)
                    .with_context(|| format!("opening {}", path.display()))?;
                let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
                w.serialize(report.score_row())?;
                w.flush()?;
            }
            print_json(&report)?;
        }
        Command::Raters {
            inputs,
            label,
            output,
            consensus,
        } => {
            let vols = inputs.iter().map(|p| read_labels(p, None)).collect::<Result<Vec<_>>>()?;
            let m = pairwise_dice_matrix(&vols, label)?;
            let names: Vec<String> = inputs
                .iter()
                .map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default())
                .collect();
            let sink: Box<dyn std::io::Write> = match &output {
                Some(p) => Box::new(std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?),
                None => Box::new(std::io::stdout()),
            };
            let mut w = csv::Writer::from_writer(sink);
            let mut header = vec!["rater".to_string()];
            header.extend(names.iter().cloned());
            w.write_record(&header)?;
            for (name, row) in names.iter().zip(&m) {
                let mut rec = vec![name.clone()];
                rec.extend(row.iter().map(f64::to_string));
                w.write_record(&rec)?;
            }
            w.flush()?;
            if let Some(p) = consensus {
                write_label_volume(&majority_vote(&vols)?, &p)?;
            }
        }
        Command::Compare {
            a,
            b,
            metric,
            method_a,
            method_b,
        } => {
            let ta = read_metric_column(&a, &metric, method_a.as_deref())?;
            let tb = read_metric_column(&b, &metric, method_b.as_deref())?;
            print_json(&compare_tables(&ta, &tb, &metric)?)?;
        }
        Command::Report {
            manifest,
            jobs,
            output_dir,
        } => {
            let mut m = RunManifest::from_file(&manifest)?;
            if let Some(o) = output_dir {
                m.output_dir = o;
            }
            let outcome = run_evaluation(&m, jobs.unwrap_or_else(default_jobs))?;
            eprintln!(
                "scored {} of {} cases into {}",
                outcome.n_cases - outcome.errors.len(),
                outcome.n_cases,
                outcome.output_dir.display()
            );
            return Ok(ExitCode::from(outcome.exit_code() as u8));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
