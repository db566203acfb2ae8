//! Relevance decomposition for the Fisher Vector pipeline.
//!
//! The chain runs from the classifier score down to pixels:
//!
//! 1. classifier score to FV dimensions: `R3_d = w_d * fv_d` (bias absorbed);
//! 2. FV dimensions to descriptor dimensions in PCA space, splitting each
//!    pooled FV dimension among descriptors in proportion to their mapping
//!    output (epsilon-stabilized);
//! 3. either the coarse path, spreading each descriptor's total uniformly
//!    over its receptive field, or the fine path, back-projecting through
//!    PCA to the 128 SIFT dimensions and spreading each spatial bin's
//!    relevance over the pixels of that bin.
//!
//! FV normalization is treated as transparent: `R3` is computed on the
//! vector that was scored and indexes the same dimensions of the pooled FV.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::fv::encode::{canonical_order, descriptor_mapping, FisherVector};
use crate::fv::gmm::GmmModel;
use crate::fv::model::FvModel;
use crate::fv::pca::PcaModel;
use crate::fv::sift::{LocalDescriptor, ORIENTATION_BINS};
use crate::image::GrayImage;
use crate::lrp::rules::{epsilon_absorbed, stabilizer_sign};
use crate::tensor::Tensor;

pub const DEFAULT_EPSILON: f64 = 100.0;

/// Which pixel assignment ends the chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// PCA back-projection plus per-spatial-bin redistribution.
    Fine,
    /// Uniform redistribution over each descriptor's receptive field.
    Coarse,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fine" => Ok(Mode::Fine),
            "coarse" => Ok(Mode::Coarse),
            other => Err(Error::Config(format!("unknown mode '{other}' (expected fine or coarse)"))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Fine => "fine",
            Mode::Coarse => "coarse",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorRelevance {
    /// `R2_{l_i}` in the reduced (PCA) space.
    pub per_dim: Vec<f64>,
    /// `R2_l`, the sum of `per_dim`.
    pub total: f64,
    /// Back-projected relevance over the original descriptor dimensions.
    pub original: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PixelRelevance {
    /// `height x width`.
    pub map: Tensor,
    pub mode: Mode,
}

impl PixelRelevance {
    pub fn zeros(width: usize, height: usize, mode: Mode) -> Result<Self> {
        Ok(PixelRelevance { map: Tensor::zeros(vec![height, width])?, mode })
    }

    pub fn width(&self) -> usize {
        self.map.shape()[1]
    }

    pub fn height(&self) -> usize {
        self.map.shape()[0]
    }

    pub fn sum(&self) -> f64 {
        self.map.sum()
    }
}

/// `R3_d = w_d * fv_d`.
pub fn decompose_classifier(weights: &[f64], fv: &[f64]) -> Result<Vec<f64>> {
    if weights.len() != fv.len() {
        return Err(Error::Shape(format!("{} weights for an FV of length {}", weights.len(), fv.len())));
    }
    Ok(weights.iter().zip(fv).map(|(w, x)| w * x).collect())
}

fn stabilized(num: f64, den: f64, epsilon: f64, at: usize) -> Result<f64> {
    let den = den + epsilon * stabilizer_sign(den);
    if den == 0.0 {
        return if num == 0.0 { Ok(0.0) } else { Err(Error::ZeroDenominator { output: at }) };
    }
    Ok(num / den)
}

/// Splits `R3` among the descriptors that were pooled into `fv`.
///
/// `descriptors` are the PCA-space vectors; their pooled mapping must
/// reproduce `fv` (the unnormalized FV), otherwise the set does not match.
pub fn decompose_fv_to_descriptors(
    g: &GmmModel,
    descriptors: &[Vec<f64>],
    fv: &FisherVector,
    r3: &[f64],
    epsilon: f64,
) -> Result<Vec<DescriptorRelevance>> {
    if !(epsilon >= 0.0) {
        return Err(Error::Config(format!("epsilon must be nonnegative, got {epsilon}")));
    }
    let (k, d) = (g.k(), g.dim());
    if r3.len() != 2 * k * d || fv.values.len() != 2 * k * d {
        return Err(Error::Shape(format!(
            "expected FV relevance of length {}, got {} (fv {})",
            2 * k * d,
            r3.len(),
            fv.values.len()
        )));
    }
    if descriptors.is_empty() {
        return Err(Error::InsufficientData("no descriptors to decompose onto".into()));
    }
    let mappings = descriptors.iter().map(|l| descriptor_mapping(g, l)).collect::<Result<Vec<_>>>()?;
    let mut pooled = vec![0.0; 2 * k * d];
    for idx in canonical_order(descriptors) {
        for (p, m) in pooled.iter_mut().zip(&mappings[idx]) {
            *p += m;
        }
    }
    let scale = fv.values.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    if pooled.iter().zip(&fv.values).any(|(a, b)| (a - b).abs() > 1e-9 * scale) {
        return Err(Error::Validation("descriptor set does not match the Fisher Vector".into()));
    }

    mappings
        .iter()
        .map(|psi| {
            // every FV dimension belongs to exactly one descriptor dimension:
            // delta(i, mu_k) = 2kD + i and delta(i, sigma_k) = 2kD + D + i
            let mut per_dim = vec![0.0; d];
            for (dim, (&m, (&s, &r))) in psi.iter().zip(pooled.iter().zip(r3)).enumerate() {
                if r == 0.0 {
                    continue;
                }
                per_dim[dim % d] += stabilized(m, s, epsilon, dim)? * r;
            }
            let total = per_dim.iter().sum();
            Ok(DescriptorRelevance { per_dim, total, original: None })
        })
        .collect()
}

/// Redistributes reduced-space relevance onto the original descriptor
/// dimensions through the linear PCA map `out_i = sum_u c_iu (x_u - m_u)`.
pub fn backproject_pca(p: &PcaModel, reduced: &[f64], original: &[f64], epsilon: f64) -> Result<Vec<f64>> {
    if reduced.len() != p.output_dim() || original.len() != p.input_dim() {
        return Err(Error::Shape(format!(
            "PCA back-projection expects {} -> {} dimensions, got {} and {}",
            p.input_dim(),
            p.output_dim(),
            original.len(),
            reduced.len()
        )));
    }
    if !(epsilon >= 0.0) {
        return Err(Error::Config(format!("epsilon must be nonnegative, got {epsilon}")));
    }
    let centred: Vec<f64> = original.iter().zip(&p.mean).map(|(x, m)| x - m).collect();
    let mut out = vec![0.0; p.input_dim()];
    for (i, (row, &r)) in p.components.iter().zip(reduced).enumerate() {
        if r == 0.0 {
            continue;
        }
        let z: Vec<f64> = row.iter().zip(&centred).map(|(c, x)| c * x).collect();
        let total: f64 = z.iter().sum();
        for (o, &zu) in out.iter_mut().zip(&z) {
            *o += stabilized(zu, total, epsilon, i)? * r;
        }
    }
    Ok(out)
}

/// Stabilizer share of [`backproject_pca`].
pub fn pca_absorbed(p: &PcaModel, reduced: &[f64], original: &[f64], epsilon: f64) -> Result<f64> {
    if reduced.len() != p.output_dim() || original.len() != p.input_dim() {
        return Err(Error::Shape("PCA back-projection dimensions do not match the model".into()));
    }
    let totals: Vec<f64> = p.project(original)?;
    Ok(epsilon_absorbed(&totals, reduced, epsilon))
}

fn check_inside(rect_x: usize, rect_y: usize, w: usize, h: usize, map: &PixelRelevance) -> Result<()> {
    if rect_x + w > map.width() || rect_y + h > map.height() {
        return Err(Error::Shape(format!(
            "rectangle at ({rect_x}, {rect_y}) of {w}x{h} leaves the {}x{} image",
            map.width(),
            map.height()
        )));
    }
    Ok(())
}

fn spread(map: &mut PixelRelevance, x0: usize, y0: usize, w: usize, h: usize, value: f64) {
    let width = map.width();
    let data = map.map.data_mut();
    for y in y0..y0 + h {
        for v in &mut data[y * width + x0..y * width + x0 + w] {
            *v += value;
        }
    }
}

/// Fine assignment: each spatial bin's summed orientation relevance is spread
/// evenly over the bin's pixels.
pub fn redistribute_bins(relevance: &[f64], geom: &LocalDescriptor, map: &mut PixelRelevance) -> Result<()> {
    if relevance.len() != geom.bin_rects.len() * ORIENTATION_BINS {
        return Err(Error::Shape(format!(
            "expected {} relevance values, got {}",
            geom.bin_rects.len() * ORIENTATION_BINS,
            relevance.len()
        )));
    }
    for rect in &geom.bin_rects {
        check_inside(rect.x, rect.y, rect.width, rect.height, map)?;
    }
    for (rect, bin) in geom.bin_rects.iter().zip(relevance.chunks(ORIENTATION_BINS)) {
        let total: f64 = bin.iter().sum();
        if total != 0.0 {
            spread(map, rect.x, rect.y, rect.width, rect.height, total / rect.area() as f64);
        }
    }
    Ok(())
}

/// Coarse assignment: `total / size^2` added to every pixel of the field.
pub fn redistribute_uniform(total: f64, geom: &LocalDescriptor, map: &mut PixelRelevance) -> Result<()> {
    check_inside(geom.x, geom.y, geom.size, geom.size, map)?;
    if total != 0.0 {
        spread(map, geom.x, geom.y, geom.size, geom.size, total / (geom.size * geom.size) as f64);
    }
    Ok(())
}

/// Per-stage relevance sums of one FV explanation.
#[derive(Debug, Clone, PartialEq)]
pub struct FvDiagnostics {
    pub class: usize,
    pub mode: Mode,
    pub epsilon: f64,
    pub descriptors: usize,
    /// `f(x)`.
    pub score: f64,
    pub bias: f64,
    /// Sum of `R3` over FV dimensions (`f(x) - b`).
    pub fv_sum: f64,
    /// Sum of `R2` over descriptors and reduced dimensions.
    pub descriptor_sum: f64,
    /// Sum over original descriptor dimensions (fine mode only).
    pub backprojected_sum: Option<f64>,
    pub pixel_sum: f64,
    /// Relevance magnitude held back by the stabilizer when splitting pooled
    /// FV dimensions among descriptors.
    pub absorbed_pooling: f64,
    /// The same for the PCA back-projection (zero in coarse mode).
    pub absorbed_pca: f64,
}

impl FvDiagnostics {
    /// Total stabilizer share over both stages.
    pub fn absorbed(&self) -> f64 {
        self.absorbed_pooling + self.absorbed_pca
    }

    /// Signed difference between `R3` and the pixel map.
    pub fn net_loss(&self) -> f64 {
        self.fv_sum - self.pixel_sum
    }

    /// Line-oriented `key value` report.
    pub fn report(&self) -> String {
        let mut s = String::new();
        writeln!(s, "model fv").unwrap();
        writeln!(s, "class {}", self.class).unwrap();
        writeln!(s, "mode {}", self.mode).unwrap();
        writeln!(s, "epsilon {}", self.epsilon).unwrap();
        writeln!(s, "descriptors {}", self.descriptors).unwrap();
        writeln!(s, "score {:e}", self.score).unwrap();
        writeln!(s, "bias {:e}", self.bias).unwrap();
        writeln!(s, "sum.fv {:e}", self.fv_sum).unwrap();
        writeln!(s, "sum.descriptor {:e}", self.descriptor_sum).unwrap();
        if let Some(b) = self.backprojected_sum {
            writeln!(s, "sum.backprojected {b:e}").unwrap();
        }
        writeln!(s, "sum.pixel {:e}", self.pixel_sum).unwrap();
        writeln!(s, "absorbed.pooling {:e}", self.absorbed_pooling).unwrap();
        writeln!(s, "absorbed.pca {:e}", self.absorbed_pca).unwrap();
        writeln!(s, "absorbed {:e}", self.absorbed()).unwrap();
        writeln!(s, "net.loss {:e}", self.net_loss()).unwrap();
        s
    }
}

/// Runs the full chain for descriptors already extracted from a
/// `width x height` image.
pub fn explain_descriptors(
    model: &FvModel,
    descriptors: Vec<LocalDescriptor>,
    width: usize,
    height: usize,
    class: usize,
    mode: Mode,
    epsilon: f64,
) -> Result<(PixelRelevance, FvDiagnostics)> {
    if class >= model.classifier.n_classes() {
        return Err(Error::Config(format!(
            "class {class} out of range for {} classes",
            model.classifier.n_classes()
        )));
    }
    // canonical geometry order keeps the pixel accumulation order-invariant
    let mut descriptors = descriptors;
    descriptors.sort_by(|a, b| {
        (a.size, a.y, a.x).cmp(&(b.size, b.y, b.x)).then_with(|| {
            a.vector.iter().zip(&b.vector).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
        })
    });
    let encoded = model.encode_descriptors(descriptors)?;
    let weights = &model.classifier.weights[class];
    let bias = model.classifier.biases[class];
    let score = model.classifier.predict(class, &encoded.scored.values)?;
    let r3 = decompose_classifier(weights, &encoded.scored.values)?;
    let fv_sum = r3.iter().sum();

    let mut per_desc = decompose_fv_to_descriptors(&model.gmm, &encoded.projected, &encoded.raw, &r3, epsilon)?;
    let descriptor_sum = per_desc.iter().map(|d| d.total).sum();
    let absorbed_pooling = epsilon_absorbed(&encoded.raw.values, &r3, epsilon);
    let mut absorbed_pca = 0.0;

    let mut map = PixelRelevance::zeros(width, height, mode)?;
    let mut backprojected_sum = None;
    match mode {
        Mode::Coarse => {
            for (rel, geom) in per_desc.iter().zip(&encoded.descriptors) {
                redistribute_uniform(rel.total, geom, &mut map)?;
            }
        }
        Mode::Fine => {
            let mut total = 0.0;
            for (rel, geom) in per_desc.iter_mut().zip(&encoded.descriptors) {
                let orig = backproject_pca(&model.pca, &rel.per_dim, &geom.vector, epsilon)?;
                absorbed_pca += pca_absorbed(&model.pca, &rel.per_dim, &geom.vector, epsilon)?;
                total += orig.iter().sum::<f64>();
                redistribute_bins(&orig, geom, &mut map)?;
                rel.original = Some(orig);
            }
            backprojected_sum = Some(total);
        }
    }
    let diagnostics = FvDiagnostics {
        class,
        mode,
        epsilon,
        descriptors: encoded.descriptors.len(),
        score,
        bias,
        fv_sum,
        descriptor_sum,
        backprojected_sum,
        pixel_sum: map.sum(),
        absorbed_pooling,
        absorbed_pca,
    };
    Ok((map, diagnostics))
}

/// Explains `model`'s score for `class` on `image` at the chosen resolution.
pub fn explain_fv(
    image: &GrayImage,
    model: &FvModel,
    class: usize,
    mode: Mode,
    epsilon: f64,
) -> Result<(PixelRelevance, FvDiagnostics)> {
    let descriptors = crate::fv::sift::extract_dense_sift(image, &model.sift)?;
    if descriptors.is_empty() {
        return Err(Error::Shape(format!(
            "image {}x{} is smaller than every descriptor size {:?}",
            image.width, image.height, model.sift.sizes
        )));
    }
    explain_descriptors(model, descriptors, image.width, image.height, class, mode, epsilon)
}
