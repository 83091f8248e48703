use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use okp::codec::{self, DEFAULT_EXTEND};
use okp::harness::{
    self, EvalOptions, FrameRecord, NoiseRecipe, SolvedFrame, SyntheticSequence,
};
use okp::okp::{flip_merge, solve_pose};
use okp::{Error, Skeleton};

const SKELETON_ENV: &str = "OKP_SKELETON_PATH";

/// Orientation keypoints: synthesize, solve, decode and evaluate 6D poses.
#[derive(Parser)]
#[command(name = "okp", version)]
struct Cli {
    /// Built-in skeleton name (h36m17, h36m21) or path to a skeleton TOML.
    /// Defaults to $OKP_SKELETON_PATH, then h36m17.
    #[arg(long, short = 's', global = true)]
    skeleton: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Skeleton config utilities.
    Skeleton {
        #[command(subcommand)]
        action: SkeletonAction,
    },
    /// Generate a dataset of random ground-truth poses.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        frames: usize,
        /// Largest per-bone rotation away from the parent, radians.
        #[arg(long, default_value_t = 1.0)]
        angle_limit: f64,
        #[arg(long, default_value_t = 1)]
        groups: usize,
        #[command(flatten)]
        out: Output,
    },
    /// Solve each frame's keypoints (predictions if present) into bone
    /// rotations and joint positions.
    Solve {
        dataset: PathBuf,
        /// Ignore flipped-input predictions.
        #[arg(long)]
        no_flip_merge: bool,
        #[command(flatten)]
        out: Output,
    },
    /// Decode a heatmap file into a dataset of normalized-image keypoints.
    Decode {
        heatmaps: PathBuf,
        #[arg(long, default_value_t = DEFAULT_EXTEND)]
        extend: f64,
        #[command(flatten)]
        out: Output,
    },
    /// Encode each frame's keypoints as Gaussian heatmaps.
    Encode {
        dataset: PathBuf,
        /// Bins along x, y and z.
        #[arg(long, value_parser = parse_bins, default_value = "64,64,64")]
        bins: [usize; 3],
        #[arg(long, default_value_t = 2.0)]
        sigma_bins: f64,
        #[arg(long, default_value_t = DEFAULT_EXTEND)]
        extend: f64,
        #[command(flatten)]
        out: Output,
    },
    /// Write predictions made from the ground truth (or existing
    /// predictions) by adding noise and scaling the error.
    Perturb {
        dataset: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Multiplies the prediction error about the ground truth.
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[command(flatten)]
        out: Output,
    },
    /// Score predictions against ground truth.
    Eval {
        dataset: PathBuf,
        /// Score a `solve` output instead of solving in-process.
        #[arg(long)]
        solved: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
        #[command(flatten)]
        eval: EvalArgs,
        #[command(flatten)]
        out: Output,
    },
    /// Evaluate at several detector-error scales and write a CSV curve.
    Sweep {
        dataset: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0,0.5,1,1.5,2")]
        scales: Vec<f64>,
        #[command(flatten)]
        eval: EvalArgs,
        #[command(flatten)]
        out: Output,
    },
}

#[derive(Subcommand)]
enum SkeletonAction {
    /// Print the skeleton config as TOML.
    Dump {
        #[command(flatten)]
        out: Output,
    },
}

#[derive(Args)]
struct Output {
    /// Output file; stdout when omitted.
    #[arg(long, short = 'o')]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Report absolute (not root-relative) Protocol-1 errors.
    #[arg(long)]
    no_root_relative: bool,
    /// Rigid instead of similarity Protocol-2 alignment.
    #[arg(long)]
    rigid: bool,
    #[arg(long)]
    no_flip_merge: bool,
    /// PCK threshold, mm.
    #[arg(long, default_value_t = okp::metrics::PCK_THRESHOLD_MM)]
    threshold: f64,
    /// Simulate predictions with this noise where a frame has none.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl EvalArgs {
    fn options(&self) -> EvalOptions {
        EvalOptions {
            root_relative: !self.no_root_relative,
            procrustes_scale: !self.rigid,
            pck_threshold: self.threshold,
            flip_merge: !self.no_flip_merge,
            noise: self.sigma.map(|sigma| NoiseRecipe { sigma, seed: self.seed }),
            error_scale: None,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Csv,
    Json,
}

fn parse_bins(text: &str) -> Result<[usize; 3], String> {
    let v: Vec<usize> = text
        .split(',')
        .map(|b| b.trim().parse().map_err(|e| format!("`{b}`: {e}")))
        .collect::<Result<_, _>>()?;
    v.try_into().map_err(|v: Vec<usize>| format!("expected 3 bin counts, got {}", v.len()))
}

fn load_skeleton(choice: Option<&str>) -> okp::Result<Skeleton> {
    let env = std::env::var(SKELETON_ENV).ok();
    let name = choice.or(env.as_deref()).unwrap_or("h36m17");
    if okp::skeleton::builtin_config(name).is_some() {
        return Skeleton::builtin(name);
    }
    let text = std::fs::read_to_string(name).map_err(|e| Error::format(format!("skeleton {name}"), e))?;
    Skeleton::from_toml_str(&text)
}

fn open(path: &Path) -> okp::Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::format(path.display().to_string(), e))
}

fn read_dataset(path: &Path, skel: &Skeleton) -> okp::Result<Vec<FrameRecord>> {
    harness::read_dataset(open(path)?, skel).map_err(|e| Error::format(path.display().to_string(), e))
}

impl Output {
    fn writer(&self) -> okp::Result<Box<dyn Write>> {
        Ok(match &self.output {
            Some(p) => Box::new(BufWriter::new(
                File::create(p).map_err(|e| Error::format(p.display().to_string(), e))?,
            )),
            None => Box::new(BufWriter::new(io::stdout().lock())),
        })
    }

    fn write_str(&self, text: &str) -> okp::Result<()> {
        let mut w = self.writer()?;
        w.write_all(text.as_bytes())?;
        w.flush()?;
        Ok(())
    }
}

fn solve_all(frames: &[FrameRecord], skel: &Skeleton, merge: bool) -> okp::Result<Vec<SolvedFrame>> {
    frames
        .par_iter()
        .map(|f| {
            let mut kps = f.pred_keypoints.clone().unwrap_or_else(|| f.gt_keypoints.clone());
            if merge {
                if let Some(flipped) = &f.pred_flipped {
                    kps = flip_merge(&kps, flipped, skel)?;
                }
            }
            let pose = solve_pose(&kps, skel)?;
            let positions = skel.forward_kinematics(&pose, skel.default_lengths())?;
            Ok(SolvedFrame {
                frame_id: f.frame_id.clone(),
                group: f.group.clone(),
                pose,
                positions,
            })
        })
        .collect::<Vec<okp::Result<_>>>()
        .into_iter()
        .zip(frames)
        .map(|(r, f)| r.map_err(|e| Error::format(format!("frame {}", f.frame_id), e)))
        .collect()
}

fn run(cli: Cli) -> okp::Result<()> {
    let skel = load_skeleton(cli.skeleton.as_deref())?;
    match cli.command {
        Command::Skeleton {
            action: SkeletonAction::Dump { out },
        } => out.write_str(&skel.to_toml_string()),
        Command::Synth {
            seed,
            frames,
            angle_limit,
            groups,
            out,
        } => {
            let seq = SyntheticSequence {
                seed,
                n_frames: frames,
                angle_limit,
                groups,
            };
            let frames = seq.generate(&skel, skel.default_lengths())?;
            harness::write_dataset(out.writer()?, &frames, &skel)
        }
        Command::Solve {
            dataset,
            no_flip_merge,
            out,
        } => {
            let frames = read_dataset(&dataset, &skel)?;
            let solved = solve_all(&frames, &skel, !no_flip_merge)?;
            harness::write_solved(out.writer()?, &solved, &skel)
        }
        Command::Decode { heatmaps, extend, out } => {
            let maps = codec::read_heatmaps(open(&heatmaps)?)?;
            let n = skel.n_keypoints();
            if maps.is_empty() || maps.len() % n != 0 {
                return Err(Error::format(
                    heatmaps.display().to_string(),
                    format!("{} heatmap triples is not a multiple of {n} keypoints", maps.len()),
                ));
            }
            let frames = maps
                .chunks(n)
                .enumerate()
                .map(|(i, chunk)| {
                    Ok(FrameRecord {
                        frame_id: format!("{i:06}"),
                        group: "decoded".to_string(),
                        gt_pose: None,
                        gt_keypoints: codec::decode_keypoints(chunk, extend, &skel)?,
                        pred_keypoints: None,
                        pred_flipped: None,
                        lengths_id: "default".to_string(),
                    })
                })
                .collect::<okp::Result<Vec<_>>>()?;
            harness::write_dataset(out.writer()?, &frames, &skel)
        }
        Command::Encode {
            dataset,
            bins,
            sigma_bins,
            extend,
            out,
        } => {
            let frames = read_dataset(&dataset, &skel)?;
            let mut maps = Vec::new();
            for f in &frames {
                maps.extend(codec::encode_keypoints(&f.gt_keypoints, bins, sigma_bins, extend)?);
            }
            codec::write_heatmaps(out.writer()?, &maps)
        }
        Command::Perturb {
            dataset,
            sigma,
            seed,
            scale,
            out,
        } => {
            let mut frames = read_dataset(&dataset, &skel)?;
            let noise = NoiseRecipe { sigma, seed };
            for (i, f) in frames.iter_mut().enumerate() {
                let base = f.pred_keypoints.as_ref().unwrap_or(&f.gt_keypoints);
                let noisy = harness::inject_gaussian_noise(base, sigma, noise.frame_seed(i))?;
                f.pred_keypoints = Some(harness::inject_error_scale(&noisy, &f.gt_keypoints, scale)?);
            }
            harness::write_dataset(out.writer()?, &frames, &skel)
        }
        Command::Eval {
            dataset,
            solved,
            format,
            eval,
            out,
        } => {
            let frames = read_dataset(&dataset, &skel)?;
            let options = eval.options();
            let report = match solved {
                Some(path) => {
                    let solved = harness::read_solved(open(&path)?, &skel)
                        .map_err(|e| Error::format(path.display().to_string(), e))?;
                    harness::evaluate_solved(&frames, &solved, &skel, &options)?
                }
                None => harness::evaluate(&frames, &skel, skel.default_lengths(), &options)?,
            };
            for failure in &report.failures {
                eprintln!("warning: frame {}: {}", failure.frame, failure.error);
            }
            out.write_str(&match format {
                Format::Text => report.to_text(),
                Format::Csv => report.to_csv(),
                Format::Json => report.to_json() + "\n",
            })
        }
        Command::Sweep {
            dataset,
            scales,
            eval,
            out,
        } => {
            let frames = read_dataset(&dataset, &skel)?;
            let curve = harness::sensitivity_sweep(&frames, &scales, &skel, skel.default_lengths(), &eval.options())?;
            out.write_str(&curve.to_csv())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
