//! The `egomocap` batch command line.
//!
//! Exit codes: 0 on success, 1 on a domain error, 2 on a usage error.
//! Every randomized subcommand takes a mandatory `--seed`.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{make_equidistant_camera, FisheyeCamera};
use crate::error::{Error, Result};
use crate::heatmap::{decode, load_heatmap_stream, save_heatmap_stream, DecodeOptions, DecodedJoints};
use crate::metrics::{body_only, evaluate_frames, Alignment, MetricKind};
use crate::motion::MotionSequence;
use crate::patch::{extract_patches, precompute_grid, tangent_frame, PatchGridConfig, SamplingGrid};
use crate::pose::{assemble, BodyEstimate, HandEstimate};
use crate::prior::{prepare_dataset, refine, train_denoiser, DenoiserModel, LossWeighting, RefineOptions, StepNoise, TrainConfig, WINDOW};
use crate::raster::Raster;
use crate::skeleton::{ReferenceSkeleton, BODY_JOINTS};
use crate::synth::render::{DEFAULT_DEPTH_RANGE, DEFAULT_NOISE_M, DEFAULT_SIGMA_VOXELS};
use crate::synth::{
    gen_motion, observe_hands, render_body_frame, Corruption, EgoRig, HandFrame, Manifest, ManifestEntry, MotionFamily,
    MotionSpec, MANIFEST_VERSION,
};

/// Version of the decoded-joints and hand-observation JSON files.
pub const OBSERVATION_VERSION: u32 = 1;

#[derive(Parser, Debug)]
#[command(name = "egomocap", version, about = "Egocentric whole-body motion capture pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fisheye camera models.
    #[command(subcommand)]
    Camera(CameraCmd),
    /// Tangent-plane patch sampling grids.
    #[command(subcommand)]
    Grid(GridCmd),
    /// Undistorted patch extraction.
    #[command(subcommand)]
    Patches(PatchesCmd),
    /// 3D heatmap decoding.
    #[command(subcommand)]
    Heatmap(HeatmapCmd),
    /// Combine decoded body joints and hand estimates into whole-body poses.
    Assemble(AssembleArgs),
    /// Synthetic motion and observations.
    #[command(subcommand)]
    Synth(SynthCmd),
    /// Diffusion motion prior.
    #[command(subcommand)]
    Prior(PriorCmd),
    /// Compare a predicted sequence against ground truth.
    Eval(EvalArgs),
}

#[derive(Subcommand, Debug)]
enum CameraCmd {
    /// Build an equidistant test camera with a fitted backward polynomial.
    MakeEquidistant {
        #[arg(long)]
        focal: f64,
        #[arg(long)]
        size: u32,
        #[arg(long, default_value_t = 6)]
        degree: usize,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Check project/unproject consistency; prints a JSON report.
    Validate {
        camera: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        tol_px: f64,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
    },
}

#[derive(Subcommand, Debug)]
enum GridCmd {
    /// Precompute fisheye sampling coordinates for every patch.
    Precompute {
        #[arg(long)]
        camera: PathBuf,
        /// Patches per side.
        #[arg(long, default_value_t = 16)]
        n: usize,
        /// Samples per patch side.
        #[arg(long, default_value_t = 16)]
        m: usize,
        /// Pixel offset used to orient each tangent frame.
        #[arg(long, default_value_t = 8.0)]
        offset: f64,
        /// Patch side length on the tangent plane.
        #[arg(long, default_value_t = 0.2)]
        side: f64,
        #[arg(short, long)]
        output: PathBuf,
    },
}

#[derive(Subcommand, Debug)]
enum PatchesCmd {
    /// Sample patches from a PNG image.
    Extract {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
}

#[derive(Subcommand, Debug)]
enum HeatmapCmd {
    /// Soft-argmax decode of a heatmap stream to camera-frame joints.
    Decode {
        #[arg(long)]
        heatmaps: PathBuf,
        #[arg(long)]
        camera: PathBuf,
        #[arg(long, default_value_t = crate::heatmap::DEFAULT_TEMPERATURE)]
        temperature: f64,
        #[arg(long, default_value_t = crate::heatmap::DEFAULT_SMOOTH_SIGMA)]
        smooth_sigma: f64,
        #[arg(short, long)]
        output: PathBuf,
    },
}

#[derive(Args, Debug)]
struct AssembleArgs {
    /// Decoded body joints (from `heatmap decode`).
    #[arg(long)]
    body: PathBuf,
    /// Hand observations; hands are filled with rest poses when omitted.
    #[arg(long)]
    hands: Option<PathBuf>,
    #[arg(long)]
    camera: PathBuf,
    #[arg(long, default_value_t = 30.0)]
    fps: f64,
    /// World up axis in camera coordinates, `x,y,z`.
    #[arg(long, value_parser = parse_vec3, allow_hyphen_values = true)]
    up: Option<Vector3<f64>>,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Subcommand, Debug)]
enum SynthCmd {
    /// Procedural motion sequences plus a manifest.
    Motion {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = WINDOW)]
        length: usize,
        #[arg(long, default_value_t = 30.0)]
        fps: f64,
        #[arg(long)]
        seed: u64,
        /// Comma-separated subset of walk, reach, wave, hand.
        #[arg(long, value_delimiter = ',', default_value = "walk,reach,wave,hand")]
        families: Vec<String>,
        #[arg(long, default_value_t = crate::synth::motion::DEFAULT_V_MAX)]
        v_max: f64,
        /// Output directory.
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Simulated observations of one sequence from the head-mounted rig:
    /// body.eghm, hands.json, gt.json (camera frame) and rig.json.
    Heatmaps {
        #[arg(long)]
        motion: PathBuf,
        #[arg(long)]
        camera: PathBuf,
        #[arg(long)]
        seed: u64,
        /// `N` or `D,H,W`.
        #[arg(long, default_value = "64", value_parser = parse_dims)]
        dims: (usize, usize, usize),
        #[arg(long, default_value_t = DEFAULT_SIGMA_VOXELS)]
        sigma: f64,
        #[arg(long, default_value_t = DEFAULT_DEPTH_RANGE.0)]
        depth_min: f64,
        #[arg(long, default_value_t = DEFAULT_DEPTH_RANGE.1)]
        depth_max: f64,
        /// Probability that a joint observation is corrupted.
        #[arg(long, default_value_t = 0.25)]
        corrupt_prob: f64,
        #[arg(long, default_value_t = DEFAULT_NOISE_M * 1000.0)]
        noise_mm: f64,
        /// Hand crop size in pixels.
        #[arg(long, default_value_t = 48.0)]
        bbox: f64,
        #[arg(long, default_value_t = 60.0)]
        pitch: f64,
        #[arg(short, long)]
        output: PathBuf,
    },
}

#[derive(Subcommand, Debug)]
enum PriorCmd {
    /// Train the denoiser on a synthetic dataset.
    Train {
        /// Manifest file or a directory containing manifest.json.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        layers: usize,
        #[arg(long, default_value_t = 256)]
        width: usize,
        #[arg(long, default_value_t = 4)]
        heads: usize,
        #[arg(long, default_value_t = 512)]
        ffn: usize,
        #[arg(long, default_value_t = 30)]
        epochs: usize,
        #[arg(long, default_value_t = 2)]
        batch_size: usize,
        #[arg(long, default_value_t = 5e-4)]
        lr: f64,
        #[arg(long, default_value_t = 50)]
        warmup: usize,
        #[arg(long, default_value_t = 1.0)]
        grad_clip: f64,
        /// Loss weighting over diffusion steps: balanced or uniform.
        #[arg(long, default_value = "balanced")]
        weighting: LossWeighting,
        #[arg(long, default_value_t = 1000)]
        steps: usize,
        /// Training window length in frames.
        #[arg(long, default_value_t = WINDOW)]
        window: usize,
        /// Optional JSON loss report.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Uncertainty-guided refinement of an estimated sequence.
    Refine {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = crate::prior::refine::DEFAULT_K)]
        k: f64,
        #[arg(long, default_value_t = 1000)]
        t_start: usize,
        /// Re-noising between steps: posterior or marginal.
        #[arg(long, default_value = "posterior")]
        step_noise: StepNoise,
        #[arg(short, long)]
        output: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MetricArg {
    Mpjpe,
    PaMpjpe,
    BaMpjpe,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AlignArg {
    Similarity,
    Rigid,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SkeletonArg {
    WholeBody,
    Body,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, value_enum, default_value = "mpjpe")]
    metric: MetricArg,
    #[arg(long, value_enum, default_value = "similarity")]
    alignment: AlignArg,
    /// Which joints to score.
    #[arg(long, value_enum, default_value = "whole-body")]
    joints: SkeletonArg,
    /// Reference bone lengths (JSON) for BA-MPJPE.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Include the per-frame values.
    #[arg(long)]
    per_frame: bool,
    /// Also write the report here.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

fn parse_vec3(s: &str) -> std::result::Result<Vector3<f64>, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match v.as_slice() {
        [x, y, z] => Ok(Vector3::new(*x, *y, *z)),
        _ => Err(format!("expected x,y,z, got `{s}`")),
    }
}

fn parse_dims(s: &str) -> std::result::Result<(usize, usize, usize), String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match v.as_slice() {
        [n] => Ok((*n, *n, *n)),
        [d, h, w] => Ok((*d, *h, *w)),
        _ => Err(format!("expected N or D,H,W, got `{s}`")),
    }
}

#[derive(Serialize, Deserialize)]
struct DecodedFile {
    version: u32,
    frames: Vec<DecodedJoints>,
}

#[derive(Serialize, Deserialize)]
struct HandsFile {
    version: u32,
    frames: Vec<HandFrame>,
}

#[derive(Serialize, Deserialize)]
struct RigFile {
    pitch_deg: f64,
    offset: [f64; 3],
    up: [f64; 3],
}

fn check_version(kind: &'static str, found: u32) -> Result<()> {
    if found != OBSERVATION_VERSION {
        return Err(Error::Version {
            kind,
            expected: OBSERVATION_VERSION,
            found,
        });
    }
    Ok(())
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Runs one command line (including the program name) and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Camera(c) => camera(c),
        Command::Grid(GridCmd::Precompute {
            camera,
            n,
            m,
            offset,
            side,
            output,
        }) => {
            let cam = FisheyeCamera::load(&camera)?;
            let config = PatchGridConfig {
                n_patches_per_side: n,
                patch_resolution: m,
                orientation_offset: offset,
                patch_side: side,
                ..PatchGridConfig::standard(cam.height as usize, cam.width as usize)
            };
            precompute_grid(&cam, &config)?.save(&output)
        }
        Command::Patches(PatchesCmd::Extract { grid, image, output }) => {
            let grid = SamplingGrid::load(&grid)?;
            let image = Raster::load_png(&image)?;
            extract_patches(&image, &grid)?.save(&output)
        }
        Command::Heatmap(HeatmapCmd::Decode {
            heatmaps,
            camera,
            temperature,
            smooth_sigma,
            output,
        }) => {
            let cam = FisheyeCamera::load(&camera)?;
            let opts = DecodeOptions {
                temperature,
                smooth_sigma,
            };
            let frames = load_heatmap_stream(&heatmaps)?
                .iter()
                .map(|hm| decode(hm, &cam, &opts))
                .collect::<Result<Vec<_>>>()?;
            write_json(
                &output,
                &DecodedFile {
                    version: OBSERVATION_VERSION,
                    frames,
                },
            )
        }
        Command::Assemble(a) => assemble_cmd(a),
        Command::Synth(s) => synth(s),
        Command::Prior(p) => prior(p),
        Command::Eval(e) => eval(e),
    }
}

fn camera(cmd: CameraCmd) -> Result<()> {
    match cmd {
        CameraCmd::MakeEquidistant {
            focal,
            size,
            degree,
            output,
        } => make_equidistant_camera(focal, size, degree)?.save(&output),
        CameraCmd::Validate {
            camera,
            tol_px,
            samples,
        } => {
            let cam = FisheyeCamera::load(&camera)?;
            let report = cam.validate(samples, tol_px);
            println!("{}", serde_json::to_string_pretty(&report)?);
            if report.passed {
                Ok(())
            } else {
                Err(Error::Domain(format!(
                    "round-trip error {:.4} px exceeds {tol_px} px",
                    report.max_err
                )))
            }
        }
    }
}

fn assemble_cmd(a: AssembleArgs) -> Result<()> {
    let cam = FisheyeCamera::load(&a.camera)?;
    let decoded: DecodedFile = serde_json::from_str(&read_text(&a.body)?)?;
    check_version("decoded joints", decoded.version)?;
    let hands = match &a.hands {
        Some(p) => {
            let h: HandsFile = serde_json::from_str(&read_text(p)?)?;
            check_version("hand observations", h.version)?;
            if h.frames.len() != decoded.frames.len() {
                return Err(Error::Shape(format!(
                    "{} hand frames for {} body frames",
                    h.frames.len(),
                    decoded.frames.len()
                )));
            }
            h.frames
        }
        None => vec![HandFrame { left: None, right: None }; decoded.frames.len()],
    };
    let to_estimate = |o: &crate::synth::HandObservation| -> Result<HandEstimate> {
        Ok(HandEstimate {
            local_joints: o.local(),
            uncertainty: o.uncertainty.clone(),
            frame: tangent_frame(&o.center(), o.bbox / 2.0, &cam)?,
        })
    };
    let mut frames = Vec::with_capacity(decoded.frames.len());
    let mut uncertainty = Vec::with_capacity(decoded.frames.len());
    for (d, h) in decoded.frames.iter().zip(&hands) {
        if d.xyz.len() != BODY_JOINTS {
            return Err(Error::Shape(format!("decoded frame has {} joints, expected {BODY_JOINTS}", d.xyz.len())));
        }
        let body = BodyEstimate {
            joints: d.xyz.clone(),
            uncertainty: d.uncertainty.clone(),
        };
        let left = h.left.as_ref().map(to_estimate).transpose()?;
        let right = h.right.as_ref().map(to_estimate).transpose()?;
        let pose = assemble(&body, left.as_ref(), right.as_ref())?;
        frames.push(pose.joints);
        uncertainty.push(pose.uncertainty);
    }
    let mut seq = MotionSequence::new(frames, a.fps)?.with_uncertainty(uncertainty)?;
    seq.up = a.up;
    seq.save(&a.output)
}

fn synth(cmd: SynthCmd) -> Result<()> {
    match cmd {
        SynthCmd::Motion {
            n,
            length,
            fps,
            seed,
            families,
            v_max,
            output,
        } => {
            let families = families
                .iter()
                .map(|f| f.trim().parse::<MotionFamily>())
                .collect::<Result<Vec<_>>>()?;
            let spec = MotionSpec {
                n_sequences: n,
                length,
                fps,
                seed,
                families,
                v_max,
            };
            let generated = gen_motion(&spec)?;
            create_dir(&output)?;
            let mut sequences = Vec::with_capacity(generated.len());
            for (i, g) in generated.iter().enumerate() {
                let file = format!("seq_{i:04}.json");
                g.sequence.save(&output.join(&file))?;
                sequences.push(ManifestEntry {
                    file,
                    seed: g.seed,
                    family: g.family,
                });
            }
            Manifest {
                version: MANIFEST_VERSION,
                spec,
                sequences,
            }
            .save(&output.join("manifest.json"))
        }
        SynthCmd::Heatmaps {
            motion,
            camera,
            seed,
            dims,
            sigma,
            depth_min,
            depth_max,
            corrupt_prob,
            noise_mm,
            bbox,
            pitch,
            output,
        } => {
            let cam = FisheyeCamera::load(&camera)?;
            let seq = MotionSequence::load(&motion)?;
            let rig = EgoRig {
                pitch_deg: pitch,
                ..EgoRig::default()
            };
            let gt = rig.to_camera(&seq)?;
            let corruption = Corruption {
                probability: corrupt_prob,
                noise_m: noise_mm / 1000.0,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut heatmaps = Vec::with_capacity(gt.len());
            let mut hands = Vec::with_capacity(gt.len());
            for frame in &gt.frames {
                let (hm, _) = render_body_frame(
                    &frame[..BODY_JOINTS],
                    &cam,
                    dims,
                    sigma,
                    (depth_min, depth_max),
                    &corruption,
                    &mut rng,
                )?;
                heatmaps.push(hm);
                hands.push(observe_hands(frame, &cam, bbox, &corruption, &mut rng)?);
            }
            create_dir(&output)?;
            save_heatmap_stream(&output.join("body.eghm"), &heatmaps)?;
            write_json(
                &output.join("hands.json"),
                &HandsFile {
                    version: OBSERVATION_VERSION,
                    frames: hands,
                },
            )?;
            gt.save(&output.join("gt.json"))?;
            let up = rig.up();
            write_json(
                &output.join("rig.json"),
                &RigFile {
                    pitch_deg: rig.pitch_deg,
                    offset: rig.offset,
                    up: [up.x, up.y, up.z],
                },
            )
        }
    }
}

fn load_dataset(data: &Path) -> Result<Vec<MotionSequence>> {
    let manifest_path = if data.is_dir() { data.join("manifest.json") } else { data.to_path_buf() };
    let manifest = Manifest::load(&manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    manifest
        .sequences
        .iter()
        .map(|e| MotionSequence::load(&dir.join(&e.file)))
        .collect()
}

fn prior(cmd: PriorCmd) -> Result<()> {
    match cmd {
        PriorCmd::Train {
            data,
            seed,
            layers,
            width,
            heads,
            ffn,
            epochs,
            batch_size,
            lr,
            warmup,
            grad_clip,
            weighting,
            steps,
            window,
            report,
            output,
        } => {
            let sequences = load_dataset(&data)?;
            let windows = prepare_dataset(&sequences, window)?;
            let config = TrainConfig {
                layers,
                width,
                heads,
                ffn,
                epochs,
                batch_size,
                learning_rate: lr,
                warmup_steps: warmup,
                grad_clip,
                seed,
                weighting,
            };
            let schedule = crate::prior::make_schedule(
                steps,
                crate::prior::schedule::DEFAULT_BETA_MIN,
                crate::prior::schedule::DEFAULT_BETA_MAX,
            )?;
            let (model, rep) = train_denoiser(&windows, &config, &schedule, |e, l| {
                eprintln!("epoch {e}: loss {l:.6}");
            })?;
            model.save(&output)?;
            if let Some(path) = report {
                write_json(&path, &rep)?;
            }
            Ok(())
        }
        PriorCmd::Refine {
            model,
            input,
            seed,
            k,
            t_start,
            step_noise,
            output,
        } => {
            let model = DenoiserModel::load(&model)?;
            let schedule = model.config.schedule()?;
            let estimate = MotionSequence::load(&input)?;
            let opts = RefineOptions {
                k,
                t_start,
                seed,
                weight_override: None,
                step_noise,
            };
            refine(&estimate, &model, &schedule, &opts)?.save(&output)
        }
    }
}

fn eval(a: EvalArgs) -> Result<()> {
    let pred = MotionSequence::load(&a.pred)?;
    let gt = MotionSequence::load(&a.gt)?;
    let metric = match a.metric {
        MetricArg::Mpjpe => MetricKind::Mpjpe,
        MetricArg::PaMpjpe => MetricKind::PaMpjpe,
        MetricArg::BaMpjpe => MetricKind::BaMpjpe,
    };
    let alignment = match a.alignment {
        AlignArg::Similarity => Alignment::Similarity,
        AlignArg::Rigid => Alignment::Rigid,
    };
    let (which, p, g) = match a.joints {
        SkeletonArg::WholeBody => ("whole_body", pred.frames, gt.frames),
        SkeletonArg::Body => ("body", body_only(&pred.frames), body_only(&gt.frames)),
    };
    let reference = match &a.reference {
        Some(path) => ReferenceSkeleton::from_json(&read_text(path)?, which)?,
        None if which == "body" => ReferenceSkeleton::body(),
        None => ReferenceSkeleton::whole_body(),
    };
    let mut report = evaluate_frames(&p, &g, metric, alignment, Some(&reference))?;
    if !a.per_frame {
        report.per_frame = None;
    }
    let text = serde_json::to_string_pretty(&report)?;
    println!("{text}");
    if let Some(path) = a.output {
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
