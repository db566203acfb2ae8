//! Command-line surface: `fv-train`, `explain`, `render`, `diag` and `synth`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::fv::model::{fv_model_from_str, FV_MODEL_HEADER};
use crate::fv::{save_fv_model, train_fv, FvModel, FvTrainConfig, SiftConfig};
use crate::fv_lrp::{explain_fv, Mode, DEFAULT_EPSILON};
use crate::heatmap::{load_relevance, overlay_alpha, render, save_relevance, ColorMap};
use crate::image::{read_gray, read_rgb, write_pam, write_ppm, GrayImage, RgbImage};
use crate::lrp::{explain_nn, CutoffConfig, Rule};
use crate::model::Model;
use crate::model_io::{model_from_str, MODEL_HEADER};
use crate::tensor::Tensor;

#[derive(Debug, Parser)]
#[command(name = "relprop", version, about = "Layer-wise relevance propagation for NN and Fisher Vector models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a Fisher Vector model on a directory of class subdirectories.
    FvTrain(TrainArgs),
    /// Explain a model's score for one image.
    Explain(ExplainArgs),
    /// Render a saved relevance map.
    Render(RenderArgs),
    /// Summarize a model, optionally scoring an image.
    Diag(DiagArgs),
    /// Write the synthetic two-class texture dataset.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset root; each subdirectory is a class.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub seed: u64,
    /// Number of GMM components.
    #[arg(long, default_value_t = 8)]
    pub k: usize,
    #[arg(long, default_value_t = 80)]
    pub pca_dim: usize,
    /// Descriptor sizes in pixels, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [8, 16])]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 8)]
    pub stride: usize,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub regularization: f64,
    /// Score the pooled FV without signed-sqrt and L2 normalization.
    #[arg(long)]
    pub no_normalize: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RuleName {
    Basic,
    Epsilon,
    Alphabeta,
    Flat,
    W2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeName {
    Fine,
    Coarse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CutoffSpec {
    None,
    Layer(usize),
    ReceptiveField,
}

impl std::str::FromStr for CutoffSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "none" => Ok(CutoffSpec::None),
            "receptive-field" => Ok(CutoffSpec::ReceptiveField),
            _ => s
                .strip_prefix("layer:")
                .and_then(|k| k.parse().ok())
                .map(CutoffSpec::Layer)
                .ok_or_else(|| format!("expected none, layer:<k> or receptive-field, got '{s}'")),
        }
    }
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    /// Class index or name; defaults to the highest-scoring class.
    #[arg(long)]
    pub class: Option<String>,
    #[arg(long, value_enum)]
    pub rule: Option<RuleName>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// none, layer:<k> or receptive-field.
    #[arg(long)]
    pub cutoff: Option<CutoffSpec>,
    /// Pixel assignment for FV models.
    #[arg(long, value_enum)]
    pub mode: Option<ModeName>,
    /// Heatmap PPM.
    #[arg(long)]
    pub out: PathBuf,
    /// Alpha overlay (PAM, RGBA).
    #[arg(long)]
    pub overlay: Option<PathBuf>,
    /// Raw relevance map.
    #[arg(long)]
    pub relevance: Option<PathBuf>,
    /// Diagnostics report file (also printed).
    #[arg(long)]
    pub diag: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub relevance: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, requires = "image")]
    pub overlay: Option<PathBuf>,
    #[arg(long)]
    pub image: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DiagArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub image: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub per_class: usize,
    #[arg(long)]
    pub seed: u64,
}

/// A model file of either kind, told apart by its header line.
pub enum AnyModel {
    Nn(Model),
    Fv(FvModel),
}

pub fn load_any_model(path: &Path) -> Result<AnyModel> {
    let text = std::fs::read_to_string(path)?;
    let first = text.lines().next().unwrap_or("").trim();
    if first == MODEL_HEADER {
        Ok(AnyModel::Nn(model_from_str(&text)?))
    } else if first == FV_MODEL_HEADER {
        Ok(AnyModel::Fv(fv_model_from_str(&text)?))
    } else {
        Err(Error::parse(0, format!("unrecognized model header '{first}'")))
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::FvTrain(a) => cmd_fv_train(&a),
        Command::Explain(a) => cmd_explain(&a),
        Command::Render(a) => cmd_render(&a),
        Command::Diag(a) => cmd_diag(&a),
        Command::Synth(a) => crate::synth::write_dataset(&a.out, a.per_class, a.seed),
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries = std::fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<Vec<_>>>()?;
    entries.sort();
    Ok(entries)
}

/// Loads `<root>/<class>/<image>` with classes in lexicographic order.
pub fn load_dataset(root: &Path) -> Result<(Vec<GrayImage>, Vec<usize>, Vec<String>)> {
    let class_dirs: Vec<PathBuf> = sorted_entries(root)?.into_iter().filter(|p| p.is_dir()).collect();
    if class_dirs.is_empty() {
        return Err(Error::InsufficientData(format!("no classes found in {}", root.display())));
    }
    let mut images = Vec::new();
    let mut labels = Vec::new();
    let mut names = Vec::new();
    for (label, dir) in class_dirs.iter().enumerate() {
        names.push(dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default());
        for file in sorted_entries(dir)?.into_iter().filter(|p| p.is_file()) {
            match read_gray(&file) {
                Ok(img) => {
                    images.push(img);
                    labels.push(label);
                }
                Err(e) => log::warn!("skipping {}: {e}", file.display()),
            }
        }
    }
    Ok((images, labels, names))
}

pub fn cmd_fv_train(a: &TrainArgs) -> Result<()> {
    let (images, labels, names) = load_dataset(&a.data)?;
    let config = FvTrainConfig {
        sift: SiftConfig { sizes: a.sizes.clone(), stride: a.stride },
        pca_dim: a.pca_dim,
        components: a.k,
        improved: !a.no_normalize,
        regularization: a.regularization,
        epochs: a.epochs,
        seed: a.seed,
    };
    log::info!("training on {} images in {} classes", images.len(), names.len());
    let (model, report) = train_fv(&images, &labels, names, &config)?;
    save_fv_model(&model, &a.model)?;
    for (name, acc) in model.class_names.iter().zip(&report.per_class_accuracy) {
        println!("class {name} accuracy {acc:.4}");
    }
    println!("accuracy {:.4}", report.accuracy);
    Ok(())
}

fn nn_rule(a: &ExplainArgs) -> Result<Rule> {
    let rule = a.rule.unwrap_or(RuleName::Alphabeta);
    if a.epsilon.is_some() && rule != RuleName::Epsilon {
        return Err(Error::Config("--epsilon requires --rule epsilon".into()));
    }
    if (a.alpha.is_some() || a.beta.is_some()) && rule != RuleName::Alphabeta {
        return Err(Error::Config("--alpha/--beta require --rule alphabeta".into()));
    }
    match rule {
        RuleName::Basic => Ok(Rule::Basic),
        RuleName::Epsilon => Rule::epsilon(a.epsilon.unwrap_or(DEFAULT_EPSILON)),
        RuleName::Alphabeta => {
            // one of alpha/beta determines the other through alpha - beta = 1
            let (alpha, beta) = match (a.alpha, a.beta) {
                (Some(al), Some(be)) => (al, be),
                (Some(al), None) => (al, al - 1.0),
                (None, Some(be)) => (be + 1.0, be),
                (None, None) => (2.0, 1.0),
            };
            Rule::alpha_beta(alpha, beta)
        }
        RuleName::Flat => Ok(Rule::Flat),
        RuleName::W2 => Ok(Rule::WSquared),
    }
}

fn nn_input(model: &Model, path: &Path) -> Result<(Tensor, RgbImage)> {
    let rgb = read_rgb(path)?;
    let &[c, h, w] = model.input_shape() else {
        return Err(Error::Shape(format!("model input {:?} is not CxHxW", model.input_shape())));
    };
    if (rgb.width, rgb.height) != (w, h) {
        return Err(Error::Shape(format!(
            "image is {}x{} but the model expects {w}x{h}",
            rgb.width, rgb.height
        )));
    }
    let data = match c {
        1 => rgb.to_gray().data,
        3 => (0..3).flat_map(|ch| rgb.data.iter().skip(ch).step_by(3).map(|&v| f64::from(v) / 255.0)).collect(),
        _ => return Err(Error::Unsupported(format!("model expects {c} input channels (need 1 or 3)"))),
    };
    Ok((Tensor::new(vec![c, h, w], data)?, rgb))
}

fn parse_class(arg: Option<&str>, scores: &[f64], lookup: impl Fn(&str) -> Result<usize>) -> Result<usize> {
    match arg {
        Some(s) => lookup(s),
        None => Ok(scores.iter().enumerate().fold(0, |best, (c, &v)| if v > scores[best] { c } else { best })),
    }
}

fn explain_nn_cmd(model: &Model, a: &ExplainArgs) -> Result<(Tensor, RgbImage, String)> {
    if a.mode.is_some() {
        return Err(Error::Config("--mode applies to FV models; use --cutoff for networks".into()));
    }
    let rule = nn_rule(a)?;
    let cutoff = match a.cutoff.unwrap_or(CutoffSpec::None) {
        CutoffSpec::None => CutoffConfig::none(),
        CutoffSpec::Layer(k) => CutoffConfig::at(k),
        CutoffSpec::ReceptiveField => CutoffConfig::receptive_field(model),
    };
    let (input, rgb) = nn_input(model, &a.image)?;
    let (scores, trace) = model.forward(&input)?;
    let n = scores.len();
    let class = parse_class(a.class.as_deref(), scores.data(), |s| match s.parse::<usize>() {
        Ok(c) if c < n => Ok(c),
        _ => Err(Error::Config(format!("class '{s}' out of range for {n} outputs"))),
    })?;
    let rel = explain_nn(model, &trace, class, rule, cutoff)?;
    let score = scores.data()[class];
    let mut r = String::new();
    writeln!(r, "model nn").unwrap();
    writeln!(r, "class {class}").unwrap();
    writeln!(r, "rule {}", rule.name()).unwrap();
    match rule {
        Rule::Epsilon(e) => writeln!(r, "epsilon {e}").unwrap(),
        Rule::AlphaBeta { alpha, beta } => writeln!(r, "alpha {alpha}\nbeta {beta}").unwrap(),
        _ => {}
    }
    match cutoff.cutoff_layer {
        Some(c) => writeln!(r, "cutoff layer:{c}").unwrap(),
        None => writeln!(r, "cutoff none").unwrap(),
    }
    writeln!(r, "score {score:e}").unwrap();
    let sums = rel.layer_sums();
    for (l, s) in sums.iter().enumerate() {
        let kind = model.layers().get(l).map_or("output", |layer| layer.kind());
        writeln!(r, "sum.layer.{l} {kind} {s:e}").unwrap();
    }
    writeln!(r, "sum.pixel {:e}", rel.pixel_map.sum()).unwrap();
    writeln!(r, "absorbed {:e}", score - sums[0]).unwrap();
    Ok((rel.pixel_map, rgb, r))
}

fn explain_fv_cmd(model: &FvModel, a: &ExplainArgs) -> Result<(Tensor, RgbImage, String)> {
    if a.alpha.is_some() || a.beta.is_some() {
        return Err(Error::Config("--alpha/--beta do not apply to FV models".into()));
    }
    let epsilon = match a.rule.unwrap_or(RuleName::Epsilon) {
        RuleName::Epsilon => a.epsilon.unwrap_or(DEFAULT_EPSILON),
        RuleName::Basic if a.epsilon.is_none() => 0.0,
        RuleName::Basic => return Err(Error::Config("--epsilon requires --rule epsilon".into())),
        other => {
            return Err(Error::Config(format!(
                "FV models support the basic and epsilon rules, not {other:?}"
            )))
        }
    };
    let from_cutoff = match a.cutoff {
        None => None,
        Some(CutoffSpec::None) => Some(Mode::Fine),
        Some(CutoffSpec::ReceptiveField) => Some(Mode::Coarse),
        Some(CutoffSpec::Layer(_)) => {
            return Err(Error::Config("FV models take --cutoff none or receptive-field".into()))
        }
    };
    let from_mode = a.mode.map(|m| match m {
        ModeName::Fine => Mode::Fine,
        ModeName::Coarse => Mode::Coarse,
    });
    let mode = match (from_cutoff, from_mode) {
        (Some(c), Some(m)) if c != m => {
            return Err(Error::Config(format!("--cutoff implies {c} mode but --mode is {m}")))
        }
        (c, m) => m.or(c).unwrap_or(Mode::Fine),
    };
    let gray = read_gray(&a.image)?;
    let rgb = gray.to_rgb();
    let class = match a.class.as_deref() {
        Some(s) => model.class_index(s)?,
        None => {
            let scores = model.scores(&gray)?;
            parse_class(None, &scores, |_| unreachable!())?
        }
    };
    let (map, diag) = explain_fv(&gray, model, class, mode, epsilon)?;
    let mut report = format!("class.name {}\n", model.class_names[class]);
    report.push_str(&diag.report());
    Ok((map.map, rgb, report))
}

pub fn cmd_explain(a: &ExplainArgs) -> Result<()> {
    let (map, rgb, report) = match load_any_model(&a.model)? {
        AnyModel::Nn(m) => explain_nn_cmd(&m, a)?,
        AnyModel::Fv(m) => explain_fv_cmd(&m, a)?,
    };
    // render everything before writing anything
    let heat = render(&map, &ColorMap::default())?;
    let overlay = a.overlay.as_ref().map(|_| overlay_alpha(&rgb, &map)).transpose()?;
    write_ppm(&heat, &a.out)?;
    if let (Some(path), Some(img)) = (&a.overlay, &overlay) {
        write_pam(img, path)?;
    }
    if let Some(path) = &a.relevance {
        save_relevance(&map, path)?;
    }
    if let Some(path) = &a.diag {
        crate::textfmt::write_atomic(path, report.as_bytes())?;
    }
    print!("{report}");
    Ok(())
}

pub fn cmd_render(a: &RenderArgs) -> Result<()> {
    let map = load_relevance(&a.relevance)?;
    let heat = render(&map, &ColorMap::default())?;
    let overlay = match (&a.overlay, &a.image) {
        (Some(_), Some(img)) => Some(overlay_alpha(&read_rgb(img)?, &map)?),
        _ => None,
    };
    write_ppm(&heat, &a.out)?;
    if let (Some(path), Some(img)) = (&a.overlay, &overlay) {
        write_pam(img, path)?;
    }
    Ok(())
}

pub fn cmd_diag(a: &DiagArgs) -> Result<()> {
    let mut r = String::new();
    match load_any_model(&a.model)? {
        AnyModel::Nn(m) => {
            writeln!(r, "model nn").unwrap();
            writeln!(r, "input {:?}", m.input_shape()).unwrap();
            for (l, layer) in m.layers().iter().enumerate() {
                writeln!(r, "layer {l} {} -> {:?}", layer.kind(), m.activation_shape(l + 1)).unwrap();
            }
            writeln!(r, "classes {}", m.num_classes()).unwrap();
            if let Some(path) = &a.image {
                let (input, _) = nn_input(&m, path)?;
                let (scores, _) = m.forward(&input)?;
                for (c, s) in scores.data().iter().enumerate() {
                    writeln!(r, "score {c} {s:e}").unwrap();
                }
            }
        }
        AnyModel::Fv(m) => {
            writeln!(r, "model fv").unwrap();
            writeln!(r, "sift stride {} sizes {:?}", m.sift.stride, m.sift.sizes).unwrap();
            writeln!(r, "pca {} -> {}", m.pca.input_dim(), m.pca.output_dim()).unwrap();
            writeln!(r, "gmm components {}", m.gmm.k()).unwrap();
            writeln!(r, "fv length {}", m.classifier.dim()).unwrap();
            writeln!(r, "normalize {}", if m.improved { "improved" } else { "none" }).unwrap();
            for (c, name) in m.class_names.iter().enumerate() {
                writeln!(r, "class {c} {name}").unwrap();
            }
            if let Some(path) = &a.image {
                let encoded = m.encode_image(&read_gray(path)?)?;
                writeln!(r, "descriptors {}", encoded.descriptors.len()).unwrap();
                for (c, s) in m.classifier.scores(&encoded.scored.values)?.iter().enumerate() {
                    writeln!(r, "score {c} {s:e}").unwrap();
                }
            }
        }
    }
    print!("{r}");
    Ok(())
}
