//! Optimization problem families: LASSO, Rastrigin, Ackley, quadratics, and a
//! small MLP classifier. An instance owns its sampled parameters and exposes
//! value / gradient / Hessian-vector oracles.

use std::f64::consts::{E, PI};
use std::io::Read;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::rngutil::rng_from_seed;

pub const MLP_HIDDEN: usize = 20;
pub const DEFAULT_MLP_BATCH: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Kind {
    Lasso,
    Rastrigin,
    Ackley,
    Quadratic,
    MlpClassifier,
}

impl Kind {
    pub fn parse(s: &str) -> Result<Kind> {
        match s.to_ascii_lowercase().as_str() {
            "lasso" => Ok(Kind::Lasso),
            "rastrigin" => Ok(Kind::Rastrigin),
            "ackley" => Ok(Kind::Ackley),
            "quadratic" => Ok(Kind::Quadratic),
            "mlp" | "mlp_classifier" | "mlpclassifier" => Ok(Kind::MlpClassifier),
            other => Err(Error::Config(format!("unknown optimizee kind '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Kind::Lasso => "lasso",
            Kind::Rastrigin => "rastrigin",
            Kind::Ackley => "ackley",
            Kind::Quadratic => "quadratic",
            Kind::MlpClassifier => "mlp_classifier",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClassificationDataset {
    pub images: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl ClassificationDataset {
    pub fn validate(&self) -> Result<()> {
        if self.images.len() != self.labels.len() {
            return Err(Error::Format(format!(
                "image/label count mismatch: {} vs {}",
                self.images.len(),
                self.labels.len()
            )));
        }
        for img in &self.images {
            if img.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::Format("pixel outside [0,1]".into()));
            }
        }
        if self.labels.iter().any(|&l| l >= self.num_classes) {
            return Err(Error::Format("label outside [0, num_classes)".into()));
        }
        Ok(())
    }
}

/// Hyperparameters fixed at sampling time.
#[derive(Debug, Clone, Copy)]
pub struct Hyper {
    pub lambda: f64,
    pub amp: f64,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper { lambda: 0.005, amp: 10.0 }
    }
}

/// A sampled problem instance. Immutable after construction; the oracles are
/// pure functions of `(self, x)`.
#[derive(Debug, Clone)]
pub struct OptimizeeInstance {
    pub kind: Kind,
    pub a: Matrix,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub lambda: f64,
    pub amp: f64,
    pub dim_x: usize,
    pub dataset: Option<Arc<ClassificationDataset>>,
    pub batch_size: usize,
    pub seed: u64,
}

/// Sample a fresh instance; A, b, c entries are i.i.d. standard normal.
/// `dims = (n, m)`: Lasso/Quadratic allow rectangular A (n x m), Rastrigin and
/// Ackley require n = m. MlpClassifier reads dims as (input_dim, num_classes)
/// and builds a synthetic uniform-pixel dataset of `DEFAULT_MLP_BATCH` samples.
pub fn sample_instance(kind: Kind, dims: (usize, usize), hyper: Hyper, seed: u64) -> Result<OptimizeeInstance> {
    let (n, m) = dims;
    if n < 1 || m < 1 {
        return Err(Error::invalid("dims must be >= 1"));
    }
    if matches!(kind, Kind::Rastrigin | Kind::Ackley) && n != m {
        return Err(Error::dim(format!("{} requires n = m, got ({n}, {m})", kind.name())));
    }
    if hyper.lambda < 0.0 {
        return Err(Error::invalid("lambda must be nonnegative"));
    }
    if kind == Kind::Rastrigin && hyper.amp <= 0.0 {
        return Err(Error::invalid("rastrigin amplitude must be positive"));
    }
    let mut rng = rng_from_seed(seed);
    if kind == Kind::MlpClassifier {
        let (input_dim, num_classes) = (n, m);
        let images: Vec<Vec<f64>> = (0..DEFAULT_MLP_BATCH)
            .map(|_| (0..input_dim).map(|_| rng.gen_range(0.0..=1.0)).collect())
            .collect();
        let labels: Vec<usize> = (0..DEFAULT_MLP_BATCH).map(|_| rng.gen_range(0..num_classes)).collect();
        let ds = ClassificationDataset { images, labels, num_classes };
        return mlp_classifier(Arc::new(ds), DEFAULT_MLP_BATCH, seed);
    }
    let mut normal = |k: usize| -> Vec<f64> { (0..k).map(|_| rng.sample(StandardNormal)).collect() };
    let a = Matrix::new(n, m, normal(n * m));
    let b = normal(n);
    let c = if matches!(kind, Kind::Rastrigin | Kind::Ackley) { normal(n) } else { Vec::new() };
    Ok(OptimizeeInstance {
        kind,
        dim_x: a.cols,
        a,
        b,
        c,
        lambda: hyper.lambda,
        amp: hyper.amp,
        dataset: None,
        batch_size: 0,
        seed,
    })
}

/// Instance with A = I, b = 0, c = 1; the analytic optimum of Rastrigin and
/// Ackley sits at x = 0 with value 0.
pub fn identity_instance(kind: Kind, dim: usize, hyper: Hyper) -> Result<OptimizeeInstance> {
    if kind == Kind::MlpClassifier {
        return Err(Error::invalid("identity_instance does not apply to MlpClassifier"));
    }
    Ok(OptimizeeInstance {
        kind,
        a: Matrix::identity(dim),
        b: vec![0.0; dim],
        c: vec![1.0; dim],
        lambda: hyper.lambda,
        amp: hyper.amp,
        dim_x: dim,
        dataset: None,
        batch_size: 0,
        seed: 0,
    })
}

/// MLP classifier optimizee: input -> 20 (sigmoid) -> num_classes with softmax
/// cross-entropy on a fixed batch (the first `batch_size` samples), so the
/// objective is deterministic.
pub fn mlp_classifier(dataset: Arc<ClassificationDataset>, batch_size: usize, seed: u64) -> Result<OptimizeeInstance> {
    dataset.validate()?;
    if dataset.images.is_empty() {
        return Err(Error::invalid("MLP optimizee needs a nonempty dataset"));
    }
    let input_dim = dataset.images[0].len();
    let classes = dataset.num_classes;
    let dim_x = MLP_HIDDEN * input_dim + MLP_HIDDEN + classes * MLP_HIDDEN + classes;
    Ok(OptimizeeInstance {
        kind: Kind::MlpClassifier,
        a: Matrix::zeros(0, 0),
        b: Vec::new(),
        c: Vec::new(),
        lambda: 0.0,
        amp: 0.0,
        dim_x,
        dataset: Some(dataset),
        batch_size: batch_size.max(1),
        seed,
    })
}

impl OptimizeeInstance {
    fn check_len(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim_x {
            return Err(Error::dim(format!("expected vector of length {}, got {}", self.dim_x, x.len())));
        }
        Ok(())
    }

    /// Flattened problem parameters theta, used as the Global guidance vector.
    pub fn flatten_theta(&self) -> Vec<f64> {
        let mut out = self.a.data.clone();
        out.extend_from_slice(&self.b);
        out.extend_from_slice(&self.c);
        out
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        self.check_len(x)?;
        Ok(match self.kind {
            Kind::Lasso => {
                let r = linalg::sub(&self.a.matvec(x), &self.b);
                0.5 * linalg::dot(&r, &r) + self.lambda * x.iter().map(|v| v.abs()).sum::<f64>()
            }
            Kind::Quadratic => {
                let r = linalg::sub(&self.a.matvec(x), &self.b);
                0.5 * linalg::dot(&r, &r)
            }
            Kind::Rastrigin => {
                let r = linalg::sub(&self.a.matvec(x), &self.b);
                let n = self.dim_x as f64;
                let cos_term: f64 = self.c.iter().zip(x).map(|(ci, xi)| ci * (2.0 * PI * xi).cos()).sum();
                0.5 * linalg::dot(&r, &r) - self.amp * cos_term + self.amp * n
            }
            Kind::Ackley => {
                let r = linalg::norm2(&linalg::add(&self.a.matvec(x), &self.b));
                let n = self.dim_x as f64;
                let g: f64 = self.c.iter().zip(x).map(|(ci, xi)| ci * (2.0 * PI * xi).cos()).sum::<f64>() / n;
                20.0 + E - 20.0 * (-0.2 * r).exp() - g.exp()
            }
            Kind::MlpClassifier => self.mlp_loss_grad(x, false)?.0,
        })
    }

    /// Analytic gradient (LASSO uses the minimum-norm subgradient sign(0)=0).
    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x)?;
        Ok(match self.kind {
            Kind::Lasso => {
                let r = linalg::sub(&self.a.matvec(x), &self.b);
                let mut g = self.a.matvec_t(&r);
                for (gi, xi) in g.iter_mut().zip(x) {
                    *gi += self.lambda * sign0(*xi);
                }
                g
            }
            Kind::Quadratic => {
                let r = linalg::sub(&self.a.matvec(x), &self.b);
                self.a.matvec_t(&r)
            }
            Kind::Rastrigin => {
                let r = linalg::sub(&self.a.matvec(x), &self.b);
                let mut g = self.a.matvec_t(&r);
                for ((gi, ci), xi) in g.iter_mut().zip(&self.c).zip(x) {
                    *gi += 2.0 * PI * self.amp * ci * (2.0 * PI * xi).sin();
                }
                g
            }
            Kind::Ackley => {
                let ax_b = linalg::add(&self.a.matvec(x), &self.b);
                let r = linalg::norm2(&ax_b).max(1e-12);
                let n = self.dim_x as f64;
                let gexp: f64 = self.c.iter().zip(x).map(|(ci, xi)| ci * (2.0 * PI * xi).cos()).sum::<f64>() / n;
                let mut g = linalg::scale(&self.a.matvec_t(&ax_b), 4.0 * (-0.2 * r).exp() / r);
                let coef = 2.0 * PI / n * gexp.exp();
                for ((gi, ci), xi) in g.iter_mut().zip(&self.c).zip(x) {
                    *gi += coef * ci * (2.0 * PI * xi).sin();
                }
                g
            }
            Kind::MlpClassifier => self.mlp_loss_grad(x, true)?.1,
        })
    }

    /// Hessian-vector product. Exact A'A v for LASSO (valid away from x = 0),
    /// central finite differences of the gradient otherwise.
    pub fn hessian_vector_product(&self, x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x)?;
        self.check_len(v)?;
        if v.iter().all(|&vi| vi == 0.0) {
            return Ok(vec![0.0; self.dim_x]);
        }
        if self.kind == Kind::Lasso {
            return Ok(self.a.matvec_t(&self.a.matvec(v)));
        }
        let eps = 1e-4 * (1.0 + linalg::norm2(x)) / (1.0 + linalg::norm2(v));
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        linalg::axpy(&mut xp, eps, v);
        linalg::axpy(&mut xm, -eps, v);
        let gp = self.gradient(&xp)?;
        let gm = self.gradient(&xm)?;
        Ok(gp.iter().zip(&gm).map(|(p, m)| (p - m) / (2.0 * eps)).collect())
    }

    fn batch(&self) -> (&[Vec<f64>], &[usize], usize) {
        let ds = self.dataset.as_ref().expect("MLP instance has a dataset");
        let n = self.batch_size.min(ds.images.len());
        (&ds.images[..n], &ds.labels[..n], ds.num_classes)
    }

    /// Mean cross-entropy of the MLP whose flattened parameters are `x`
    /// (layout: W1 row-major, b1, W2 row-major, b2), plus its gradient when
    /// `with_grad`.
    fn mlp_loss_grad(&self, x: &[f64], with_grad: bool) -> Result<(f64, Vec<f64>)> {
        let (images, labels, classes) = self.batch();
        let input_dim = images[0].len();
        let h = MLP_HIDDEN;
        let (w1, rest) = x.split_at(h * input_dim);
        let (b1, rest) = rest.split_at(h);
        let (w2, b2) = rest.split_at(classes * h);

        let mut grad = if with_grad { vec![0.0; x.len()] } else { Vec::new() };
        let mut total = 0.0;
        let nb = images.len() as f64;
        for (img, &label) in images.iter().zip(labels) {
            // forward
            let mut hidden = vec![0.0; h];
            for j in 0..h {
                let row = &w1[j * input_dim..(j + 1) * input_dim];
                hidden[j] = sigmoid(linalg::dot(row, img) + b1[j]);
            }
            let mut logits = vec![0.0; classes];
            for k in 0..classes {
                logits[k] = linalg::dot(&w2[k * h..(k + 1) * h], &hidden) + b2[k];
            }
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            total += z.ln() + max - logits[label];
            if !with_grad {
                continue;
            }
            // backward: d loss / d logits = softmax - onehot
            let mut dlogit: Vec<f64> = exps.iter().map(|e| e / z / nb).collect();
            dlogit[label] -= 1.0 / nb;
            let (gw1, grest) = grad.split_at_mut(h * input_dim);
            let (gb1, grest) = grest.split_at_mut(h);
            let (gw2, gb2) = grest.split_at_mut(classes * h);
            let mut dhidden = vec![0.0; h];
            for k in 0..classes {
                let dk = dlogit[k];
                gb2[k] += dk;
                let row = &mut gw2[k * h..(k + 1) * h];
                for j in 0..h {
                    row[j] += dk * hidden[j];
                    dhidden[j] += dk * w2[k * h + j];
                }
            }
            for j in 0..h {
                let dj = dhidden[j] * hidden[j] * (1.0 - hidden[j]);
                gb1[j] += dj;
                let row = &mut gw1[j * input_dim..(j + 1) * input_dim];
                for (gi, pi) in row.iter_mut().zip(img) {
                    *gi += dj * pi;
                }
            }
        }
        Ok((total / nb, grad))
    }

    /// Structured-text layout for reproducibility bundles: one `key = value`
    /// line per field, floats at 17 significant digits.
    pub fn to_text(&self) -> Result<String> {
        if self.kind == Kind::MlpClassifier {
            return Err(Error::invalid("MLP instances are not text-serializable (dataset-backed)"));
        }
        let fmt_vec = |v: &[f64]| v.iter().map(|x| format!("{x:.16e}")).collect::<Vec<_>>().join(" ");
        let mut s = String::new();
        s.push_str(&format!("kind = {}\n", self.kind.name()));
        s.push_str(&format!("seed = {}\n", self.seed));
        s.push_str(&format!("rows = {}\n", self.a.rows));
        s.push_str(&format!("cols = {}\n", self.a.cols));
        s.push_str(&format!("lambda = {:.16e}\n", self.lambda));
        s.push_str(&format!("amp = {:.16e}\n", self.amp));
        s.push_str(&format!("a = {}\n", fmt_vec(&self.a.data)));
        s.push_str(&format!("b = {}\n", fmt_vec(&self.b)));
        s.push_str(&format!("c = {}\n", fmt_vec(&self.c)));
        Ok(s)
    }

    pub fn from_text(text: &str) -> Result<OptimizeeInstance> {
        let mut map = std::collections::HashMap::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("bad instance line: {line}")))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| map.get(k).ok_or_else(|| Error::Format(format!("missing key {k}")));
        let parse_vec = |s: &str| -> Result<Vec<f64>> {
            if s.is_empty() {
                return Ok(Vec::new());
            }
            s.split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|e| Error::Format(format!("bad float '{t}': {e}"))))
                .collect()
        };
        let kind = Kind::parse(get("kind")?)?;
        let rows: usize = get("rows")?.parse().map_err(|_| Error::Format("bad rows".into()))?;
        let cols: usize = get("cols")?.parse().map_err(|_| Error::Format("bad cols".into()))?;
        let a = parse_vec(get("a")?)?;
        if a.len() != rows * cols {
            return Err(Error::Format("matrix size mismatch".into()));
        }
        Ok(OptimizeeInstance {
            kind,
            a: Matrix::new(rows, cols, a),
            b: parse_vec(get("b")?)?,
            c: parse_vec(get("c")?)?,
            lambda: get("lambda")?.parse().map_err(|_| Error::Format("bad lambda".into()))?,
            amp: get("amp")?.parse().map_err(|_| Error::Format("bad amp".into()))?,
            dim_x: cols,
            dataset: None,
            batch_size: 0,
            seed: get("seed")?.parse().map_err(|_| Error::Format("bad seed".into()))?,
        })
    }
}

#[inline]
fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32_be(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(|_| Error::Format("truncated IDX file".into()))?;
    Ok(u32::from_be_bytes(buf))
}

/// Load an IDX image/label pair (big-endian header). Pixels scaled to [0,1].
pub fn load_idx(images_path: &Path, labels_path: &Path, limit: Option<usize>) -> Result<ClassificationDataset> {
    let mut imgf = std::io::BufReader::new(std::fs::File::open(images_path)?);
    let magic = read_u32_be(&mut imgf)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!("bad magic in images file: {magic:#010x}")));
    }
    let count = read_u32_be(&mut imgf)? as usize;
    let rows = read_u32_be(&mut imgf)? as usize;
    let cols = read_u32_be(&mut imgf)? as usize;

    let mut labf = std::io::BufReader::new(std::fs::File::open(labels_path)?);
    let lmagic = read_u32_be(&mut labf)?;
    if lmagic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!("bad magic in labels file: {lmagic:#010x}")));
    }
    let lcount = read_u32_be(&mut labf)? as usize;
    if lcount != count {
        return Err(Error::Format(format!("count mismatch: {count} images vs {lcount} labels")));
    }

    let take = limit.unwrap_or(count).min(count);
    let mut images = Vec::with_capacity(take);
    let mut pix = vec![0u8; rows * cols];
    for _ in 0..take {
        imgf.read_exact(&mut pix).map_err(|_| Error::Format("truncated IDX image data".into()))?;
        images.push(pix.iter().map(|&p| p as f64 / 255.0).collect());
    }
    let mut labels = vec![0u8; take];
    labf.read_exact(&mut labels).map_err(|_| Error::Format("truncated IDX label data".into()))?;
    let labels: Vec<usize> = labels.into_iter().map(|l| l as usize).collect();
    let num_classes = labels.iter().copied().max().unwrap_or(0) + 1;
    let ds = ClassificationDataset { images, labels, num_classes: num_classes.max(10) };
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rngutil::standard_normal_vec;

    fn fd_gradient(inst: &OptimizeeInstance, x: &[f64], h: f64) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[i] += h;
                xm[i] -= h;
                (inst.value(&xp).unwrap() - inst.value(&xm).unwrap()) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn sample_shapes_and_hypers() {
        let inst = sample_instance(Kind::Lasso, (5, 10), Hyper { lambda: 0.005, amp: 10.0 }, 7).unwrap();
        assert_eq!((inst.a.rows, inst.a.cols), (5, 10));
        assert_eq!(inst.dim_x, 10);
        assert_eq!(inst.lambda, 0.005);

        let ras = sample_instance(Kind::Rastrigin, (2, 2), Hyper::default(), 1).unwrap();
        assert_eq!(ras.amp, 10.0);
        assert_eq!(ras.c.len(), 2);
    }

    #[test]
    fn sampling_is_deterministic() {
        let a = sample_instance(Kind::Ackley, (4, 4), Hyper::default(), 99).unwrap();
        let b = sample_instance(Kind::Ackley, (4, 4), Hyper::default(), 99).unwrap();
        assert_eq!(a.a.data, b.a.data);
        assert_eq!(a.b, b.b);
        assert_eq!(a.c, b.c);
    }

    #[test]
    fn rastrigin_ackley_reject_rectangular() {
        assert!(sample_instance(Kind::Rastrigin, (2, 3), Hyper::default(), 0).is_err());
        assert!(sample_instance(Kind::Ackley, (5, 4), Hyper::default(), 0).is_err());
    }

    #[test]
    fn trivial_optima_at_zero() {
        for kind in [Kind::Rastrigin, Kind::Ackley] {
            let inst = identity_instance(kind, 3, Hyper::default()).unwrap();
            let v = inst.value(&[0.0; 3]).unwrap();
            assert!(v.abs() < 1e-12, "{kind:?} at 0 gave {v}");
            let g = inst.gradient(&[0.0; 3]).unwrap();
            assert!(g.iter().all(|gi| gi.abs() < 1e-12));
        }
    }

    #[test]
    fn lasso_at_zero_is_half_b_norm() {
        let inst = sample_instance(Kind::Lasso, (5, 10), Hyper::default(), 3).unwrap();
        let expect = 0.5 * linalg::dot(&inst.b, &inst.b);
        assert!((inst.value(&vec![0.0; 10]).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn quadratic_identity_gradient() {
        let inst = identity_instance(Kind::Quadratic, 2, Hyper::default()).unwrap();
        assert_eq!(inst.gradient(&[3.0, -1.0]).unwrap(), vec![3.0, -1.0]);
    }

    #[test]
    fn gradients_match_finite_differences_all_kinds() {
        let mut rng = rng_from_seed(1234);
        for kind in [Kind::Lasso, Kind::Rastrigin, Kind::Ackley, Kind::Quadratic] {
            let inst = sample_instance(kind, (4, 4), Hyper::default(), 55).unwrap();
            for probe in 0..100 {
                let mut x = standard_normal_vec(&mut rng, 4);
                // keep away from the LASSO kink
                for xi in &mut x {
                    if xi.abs() <= 1e-3 {
                        *xi = 2e-3_f64.copysign(*xi + 1e-9);
                    }
                }
                let g = inst.gradient(&x).unwrap();
                let fd = fd_gradient(&inst, &x, 1e-5);
                let num = linalg::norm2(&linalg::sub(&g, &fd));
                let den = linalg::norm2(&fd).max(1e-8);
                assert!(num / den < 1e-4, "{kind:?} probe {probe}: rel err {}", num / den);
            }
        }
    }

    #[test]
    fn mlp_gradient_matches_finite_differences() {
        let inst = sample_instance(Kind::MlpClassifier, (6, 3), Hyper::default(), 11).unwrap();
        let mut rng = rng_from_seed(5);
        let x: Vec<f64> = standard_normal_vec(&mut rng, inst.dim_x).iter().map(|v| v * 0.5).collect();
        let g = inst.gradient(&x).unwrap();
        let fd = fd_gradient(&inst, &x, 1e-5);
        let num = linalg::norm2(&linalg::sub(&g, &fd));
        let den = linalg::norm2(&fd).max(1e-8);
        assert!(num / den < 1e-4, "rel err {}", num / den);
    }

    #[test]
    fn hvp_quadratic_identity_is_v() {
        let inst = identity_instance(Kind::Quadratic, 3, Hyper::default()).unwrap();
        let v = [1.0, -2.0, 0.5];
        let hv = inst.hessian_vector_product(&[0.3, 0.1, -0.9], &v).unwrap();
        for (a, b) in hv.iter().zip(&v) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn hvp_lasso_analytic_matches_fd() {
        let inst = sample_instance(Kind::Lasso, (5, 10), Hyper::default(), 21).unwrap();
        let mut rng = rng_from_seed(2);
        let x: Vec<f64> = standard_normal_vec(&mut rng, 10).iter().map(|v| v + 0.5 * v.signum() + 0.1).collect();
        let v = standard_normal_vec(&mut rng, 10);
        let analytic = inst.hessian_vector_product(&x, &v).unwrap();
        // finite-difference path on the gradient
        let eps = 1e-4 * (1.0 + linalg::norm2(&x)) / (1.0 + linalg::norm2(&v));
        let mut xp = x.clone();
        let mut xm = x.clone();
        linalg::axpy(&mut xp, eps, &v);
        linalg::axpy(&mut xm, -eps, &v);
        let gp = inst.gradient(&xp).unwrap();
        let gm = inst.gradient(&xm).unwrap();
        for (a, (p, m)) in analytic.iter().zip(gp.iter().zip(&gm)) {
            assert!((a - (p - m) / (2.0 * eps)).abs() < 1e-6);
        }
    }

    #[test]
    fn hvp_zero_vector() {
        let inst = sample_instance(Kind::Rastrigin, (3, 3), Hyper::default(), 4).unwrap();
        let hv = inst.hessian_vector_product(&[0.1, 0.2, 0.3], &[0.0; 3]).unwrap();
        assert_eq!(hv, vec![0.0; 3]);
    }

    #[test]
    fn nonnegative_identity_landscapes() {
        let mut rng = rng_from_seed(77);
        for kind in [Kind::Rastrigin, Kind::Ackley] {
            let inst = identity_instance(kind, 4, Hyper::default()).unwrap();
            for _ in 0..200 {
                let x = standard_normal_vec(&mut rng, 4);
                assert!(inst.value(&x).unwrap() >= -1e-12);
            }
        }
    }

    #[test]
    fn value_rejects_wrong_length() {
        let inst = sample_instance(Kind::Lasso, (5, 10), Hyper::default(), 0).unwrap();
        assert!(inst.value(&[0.0; 3]).is_err());
        assert!(inst.gradient(&[0.0; 3]).is_err());
    }

    #[test]
    fn text_round_trip() {
        let inst = sample_instance(Kind::Rastrigin, (3, 3), Hyper::default(), 13).unwrap();
        let text = inst.to_text().unwrap();
        let back = OptimizeeInstance::from_text(&text).unwrap();
        assert_eq!(inst.a.data, back.a.data);
        assert_eq!(inst.b, back.b);
        assert_eq!(inst.c, back.c);
        assert_eq!(inst.seed, back.seed);
    }

    fn write_idx(dir: &std::path::Path, count: u32, magic_img: u32) -> (std::path::PathBuf, std::path::PathBuf) {
        use std::io::Write;
        let imgs = dir.join("imgs.idx");
        let labs = dir.join("labs.idx");
        let mut f = std::fs::File::create(&imgs).unwrap();
        f.write_all(&magic_img.to_be_bytes()).unwrap();
        f.write_all(&count.to_be_bytes()).unwrap();
        f.write_all(&2u32.to_be_bytes()).unwrap();
        f.write_all(&2u32.to_be_bytes()).unwrap();
        for i in 0..count * 4 {
            f.write_all(&[(i % 256) as u8]).unwrap();
        }
        let mut f = std::fs::File::create(&labs).unwrap();
        f.write_all(&IDX_LABELS_MAGIC.to_be_bytes()).unwrap();
        f.write_all(&count.to_be_bytes()).unwrap();
        for i in 0..count {
            f.write_all(&[(i % 10) as u8]).unwrap();
        }
        (imgs, labs)
    }

    #[test]
    fn idx_load_and_limit() {
        let dir = tempfile::tempdir().unwrap();
        let (imgs, labs) = write_idx(dir.path(), 7, IDX_IMAGES_MAGIC);
        let ds = load_idx(&imgs, &labs, Some(3)).unwrap();
        assert_eq!(ds.images.len(), 3);
        assert_eq!(ds.images[0].len(), 4);
        assert!(ds.labels.iter().all(|&l| l < 10));

        let empty = load_idx(&imgs, &labs, Some(0)).unwrap();
        assert!(empty.images.is_empty());
    }

    #[test]
    fn idx_bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (imgs, labs) = write_idx(dir.path(), 2, IDX_LABELS_MAGIC);
        let err = load_idx(&imgs, &labs, None).unwrap_err();
        assert!(err.to_string().contains("bad magic"));
    }
}
