//! The trained Fisher Vector pipeline and its `RELPROP-FVMODEL v1` file.

use std::path::Path;

use crate::error::{Error, Result};
use crate::fv::classifier::{train_classifier, LinearClassifier, SvmOptions};
use crate::fv::encode::{encode_fv, normalize_fv, FisherVector};
use crate::fv::gmm::{fit_gmm, GmmModel};
use crate::fv::pca::{fit_pca, PcaModel};
use crate::fv::sift::{extract_dense_sift, LocalDescriptor, SiftConfig};
use crate::image::GrayImage;
use crate::tensor::Tensor;
use crate::textfmt::{write_atomic, TextReader, TextWriter};

pub const FV_MODEL_HEADER: &str = "RELPROP-FVMODEL v1";

#[derive(Debug, Clone, PartialEq)]
pub struct FvModel {
    pub sift: SiftConfig,
    pub pca: PcaModel,
    pub gmm: GmmModel,
    /// Apply signed-sqrt + L2 normalization before the classifier.
    pub improved: bool,
    pub classifier: LinearClassifier,
    pub class_names: Vec<String>,
}

/// Everything computed on the way from an image to its class scores.
#[derive(Debug, Clone)]
pub struct EncodedImage {
    pub descriptors: Vec<LocalDescriptor>,
    /// Descriptors after PCA.
    pub projected: Vec<Vec<f64>>,
    /// Sum-pooled, unnormalized FV.
    pub raw: FisherVector,
    /// The vector actually scored.
    pub scored: FisherVector,
}

impl FvModel {
    pub fn new(
        sift: SiftConfig,
        pca: PcaModel,
        gmm: GmmModel,
        improved: bool,
        classifier: LinearClassifier,
        class_names: Vec<String>,
    ) -> Result<Self> {
        sift.validate()?;
        if gmm.dim() != pca.output_dim() {
            return Err(Error::Shape(format!(
                "GMM dimension {} does not match PCA output {}",
                gmm.dim(),
                pca.output_dim()
            )));
        }
        if classifier.dim() != 2 * gmm.k() * gmm.dim() {
            return Err(Error::Shape(format!(
                "classifier dimension {} does not match FV length {}",
                classifier.dim(),
                2 * gmm.k() * gmm.dim()
            )));
        }
        if class_names.len() != classifier.n_classes() {
            return Err(Error::Shape(format!(
                "{} class names for {} classifiers",
                class_names.len(),
                classifier.n_classes()
            )));
        }
        Ok(FvModel { sift, pca, gmm, improved, classifier, class_names })
    }

    pub fn class_index(&self, name_or_index: &str) -> Result<usize> {
        if let Some(i) = self.class_names.iter().position(|n| n == name_or_index) {
            return Ok(i);
        }
        match name_or_index.parse::<usize>() {
            Ok(i) if i < self.class_names.len() => Ok(i),
            _ => Err(Error::Config(format!("unknown class '{name_or_index}'"))),
        }
    }

    pub fn encode_descriptors(&self, descriptors: Vec<LocalDescriptor>) -> Result<EncodedImage> {
        if descriptors.is_empty() {
            return Err(Error::InsufficientData("no descriptors extracted from image".into()));
        }
        let projected = descriptors.iter().map(|d| self.pca.project(&d.vector)).collect::<Result<Vec<_>>>()?;
        let raw = encode_fv(&self.gmm, &projected)?;
        let scored = if self.improved { normalize_fv(&raw) } else { raw.clone() };
        Ok(EncodedImage { descriptors, projected, raw, scored })
    }

    pub fn encode_image(&self, image: &GrayImage) -> Result<EncodedImage> {
        self.encode_descriptors(extract_dense_sift(image, &self.sift)?)
    }

    pub fn scores(&self, image: &GrayImage) -> Result<Vec<f64>> {
        self.classifier.scores(&self.encode_image(image)?.scored.values)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FvTrainConfig {
    pub sift: SiftConfig,
    pub pca_dim: usize,
    pub components: usize,
    pub improved: bool,
    pub regularization: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for FvTrainConfig {
    fn default() -> Self {
        FvTrainConfig {
            sift: SiftConfig::default(),
            pca_dim: 80,
            components: 8,
            improved: true,
            regularization: 1e-4,
            epochs: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Fraction of each class's training images classified correctly.
    pub per_class_accuracy: Vec<f64>,
    pub accuracy: f64,
}

/// Fits PCA, GMM and the one-vs-rest classifiers on labelled images.
pub fn train_fv(
    images: &[GrayImage],
    labels: &[usize],
    class_names: Vec<String>,
    config: &FvTrainConfig,
) -> Result<(FvModel, TrainReport)> {
    if images.len() != labels.len() {
        return Err(Error::Shape(format!("{} images but {} labels", images.len(), labels.len())));
    }
    if labels.iter().any(|&l| l >= class_names.len()) {
        return Err(Error::Config("label out of range of class names".into()));
    }
    if let Some(c) = (0..class_names.len()).find(|c| !labels.contains(c)) {
        return Err(Error::InsufficientData(format!("class '{}' has no training images", class_names[c])));
    }
    let per_image = images
        .iter()
        .map(|img| extract_dense_sift(img, &config.sift))
        .collect::<Result<Vec<_>>>()?;
    if let Some(i) = per_image.iter().position(Vec::is_empty) {
        return Err(Error::InsufficientData(format!("training image {i} yields no descriptors")));
    }
    let all: Vec<Vec<f64>> = per_image.iter().flatten().map(|d| d.vector.clone()).collect();
    log::info!("fitting PCA {} -> {} on {} descriptors", all[0].len(), config.pca_dim, all.len());
    let pca = fit_pca(&all, config.pca_dim)?;
    let projected = all.iter().map(|d| pca.project(d)).collect::<Result<Vec<_>>>()?;
    log::info!("fitting GMM with {} components", config.components);
    let gmm = fit_gmm(&projected, config.components, config.seed)?;

    let encode = |descs: &[LocalDescriptor]| -> Result<Vec<f64>> {
        let p = descs.iter().map(|d| pca.project(&d.vector)).collect::<Result<Vec<_>>>()?;
        let raw = encode_fv(&gmm, &p)?;
        Ok(if config.improved { normalize_fv(&raw).values } else { raw.values })
    };
    let fvs = per_image.iter().map(|d| encode(d)).collect::<Result<Vec<_>>>()?;
    let classifier = train_classifier(
        &fvs,
        labels,
        &SvmOptions {
            regularization: config.regularization,
            epochs: config.epochs,
            seed: config.seed.wrapping_add(1),
        },
    )?;
    let mut correct = vec![0usize; class_names.len()];
    let mut total = vec![0usize; class_names.len()];
    for (fv, &label) in fvs.iter().zip(labels) {
        total[label] += 1;
        if classifier.classify(fv)? == label {
            correct[label] += 1;
        }
    }
    let per_class_accuracy =
        correct.iter().zip(&total).map(|(&c, &t)| if t == 0 { 0.0 } else { c as f64 / t as f64 }).collect();
    let accuracy = correct.iter().sum::<usize>() as f64 / labels.len() as f64;
    let model = FvModel::new(config.sift.clone(), pca, gmm, config.improved, classifier, class_names)?;
    Ok((model, TrainReport { per_class_accuracy, accuracy }))
}

fn escape_name(name: &str) -> String {
    let mut out = String::new();
    for ch in name.chars() {
        if ch == '%' || ch.is_whitespace() {
            let mut buf = [0u8; 4];
            for b in ch.encode_utf8(&mut buf).bytes() {
                out.push_str(&format!("%{b:02X}"));
            }
        } else {
            out.push(ch);
        }
    }
    out
}

fn unescape_name(raw: &str, offset: usize) -> Result<String> {
    let bytes = raw.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' {
            let hex = raw.get(i + 1..i + 3).ok_or_else(|| Error::parse(offset, "truncated escape in class name"))?;
            out.push(u8::from_str_radix(hex, 16).map_err(|_| Error::parse(offset, "bad escape in class name"))?);
            i += 3;
        } else {
            out.push(bytes[i]);
            i += 1;
        }
    }
    String::from_utf8(out).map_err(|_| Error::parse(offset, "class name is not UTF-8"))
}

fn matrix(rows: &[Vec<f64>]) -> Result<Tensor> {
    Tensor::new(vec![rows.len(), rows[0].len()], rows.concat())
}

fn rows(t: &Tensor) -> Result<Vec<Vec<f64>>> {
    if t.ndim() != 2 {
        return Err(Error::Validation(format!("expected a matrix, got shape {:?}", t.shape())));
    }
    Ok(t.data().chunks(t.shape()[1]).map(<[f64]>::to_vec).collect())
}

pub fn fv_model_to_string(m: &FvModel) -> String {
    let mut w = TextWriter::new(FV_MODEL_HEADER);
    let sizes: Vec<String> = m.sift.sizes.iter().map(usize::to_string).collect();
    w.line(&[&"sift", &m.sift.stride, &sizes.join(" ")]);
    w.line(&[&"normalize", &if m.improved { "improved" } else { "none" }]);
    w.line(&[&"classes", &m.class_names.len()]);
    for (i, name) in m.class_names.iter().enumerate() {
        w.line(&[&"class", &i, &escape_name(name)]);
    }
    w.tensor("pca_mean", &Tensor::from_vec(m.pca.mean.clone()).expect("nonempty"));
    w.tensor("pca_components", &matrix(&m.pca.components).expect("nonempty"));
    w.tensor("gmm_priors", &Tensor::from_vec(m.gmm.priors.clone()).expect("nonempty"));
    w.tensor("gmm_means", &matrix(&m.gmm.means).expect("nonempty"));
    w.tensor("gmm_variances", &matrix(&m.gmm.variances).expect("nonempty"));
    w.tensor("clf_weights", &matrix(&m.classifier.weights).expect("nonempty"));
    w.tensor("clf_biases", &Tensor::from_vec(m.classifier.biases.clone()).expect("nonempty"));
    w.finish()
}

pub fn fv_model_from_str(src: &str) -> Result<FvModel> {
    let mut r = TextReader::new(src, FV_MODEL_HEADER)?;
    let sift_line = r.expect("sift")?;
    let sift = SiftConfig { stride: sift_line.parse_arg(0)?, sizes: sift_line.parse_args_from(1)? };
    let norm = r.expect("normalize")?;
    let improved = match norm.arg(0)? {
        "improved" => true,
        "none" => false,
        other => return Err(Error::parse(norm.offset, format!("unknown normalization '{other}'"))),
    };
    let n: usize = r.expect("classes")?.parse_arg(0)?;
    let mut class_names = Vec::with_capacity(n);
    for i in 0..n {
        let line = r.expect("class")?;
        if line.parse_arg::<usize>(0)? != i {
            return Err(Error::parse(line.offset, format!("expected class {i}")));
        }
        class_names.push(unescape_name(line.arg(1)?, line.offset)?);
    }
    let pca_mean = r.tensor("pca_mean")?;
    let pca_components = r.tensor("pca_components")?;
    let priors = r.tensor("gmm_priors")?;
    let means = r.tensor("gmm_means")?;
    let variances = r.tensor("gmm_variances")?;
    let weights = r.tensor("clf_weights")?;
    let biases = r.tensor("clf_biases")?;
    r.finish()?;

    let build = || -> Result<FvModel> {
        let pca = PcaModel::new(pca_mean.data().to_vec(), rows(&pca_components)?)?;
        let gmm = GmmModel::new(priors.data().to_vec(), rows(&means)?, rows(&variances)?)?;
        let classifier = LinearClassifier::new(rows(&weights)?, biases.data().to_vec())?;
        FvModel::new(sift, pca, gmm, improved, classifier, class_names)
    };
    build().map_err(|e| match e {
        Error::Validation(_) => e,
        other => Error::Validation(other.to_string()),
    })
}

pub fn save_fv_model(model: &FvModel, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), fv_model_to_string(model).as_bytes())
}

pub fn load_fv_model(path: impl AsRef<Path>) -> Result<FvModel> {
    let bytes = std::fs::read(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|e| Error::parse(e.valid_up_to(), "model file is not valid UTF-8"))?;
    fv_model_from_str(text)
}
