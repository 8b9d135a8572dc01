//! Experiment configuration and the drivers behind the `mbfuse` binary.
//!
//! One JSON file describes a whole Wald-protocol experiment; each command
//! reads the sections it needs. Relative paths inside the file resolve
//! against the directory holding it. Every artifact embeds a hash of the
//! configuration (with the output directory blanked, so relocating a run
//! does not change its outputs).

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::s;
use serde::{Deserialize, Serialize};

use crate::admm::{solve, FusionResult, SolverConfig};
use crate::error::{ensure, Error, Result};
use crate::fisher::{compute_fim, crlb_trace, sufficient_condition, DEFAULT_SIZE_LIMIT};
use crate::image::{mix, AbundanceMap, EndmemberMatrix, Grid, MultibandImage, ObservationModel};
use crate::io::{endmembers_csv, read_endmembers, read_raster, sha256_hex, write_raster_with, write_text};
use crate::metrics::{evaluate, select_bands, MetricsParams, MetricsReport};
use crate::observation::{degrade_wald, DegradationSpec, DegradedProduct};
use crate::scene::{generate, SceneConfig};
use crate::unmixing::{extract_endmembers, init_abundances, UnmixConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SceneSource {
    Synthetic(SceneConfig),
    /// Path to an existing reference raster.
    Reference(PathBuf),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionSection {
    /// Name of the product used for extraction and initialization; by
    /// default the product with the most bands.
    #[serde(default)]
    pub source: Option<String>,
    /// Endmember CSV to use instead of extraction.
    #[serde(default)]
    pub endmember_file: Option<PathBuf>,
}

fn default_q_window() -> usize {
    32
}
fn default_threshold() -> f64 {
    0.1
}
fn default_estimates() -> Vec<PathBuf> {
    vec!["fused.img".into()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsSection {
    /// Defaults to the largest decimation ratio among the products.
    #[serde(default)]
    pub ergas_ratio: Option<f64>,
    #[serde(default = "default_q_window")]
    pub q_window: usize,
    #[serde(default = "default_threshold")]
    pub band_subset_threshold: f64,
    /// Product whose single-band response defines the band subset.
    #[serde(default)]
    pub subset_response: Option<String>,
    /// Defaults to `reference.img` in the output directory.
    #[serde(default)]
    pub reference: Option<PathBuf>,
    /// Estimates to score; relative names resolve in the output directory.
    #[serde(default = "default_estimates")]
    pub estimates: Vec<PathBuf>,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self {
            ergas_ratio: None,
            q_window: default_q_window(),
            band_subset_threshold: default_threshold(),
            subset_response: None,
            reference: None,
            estimates: default_estimates(),
        }
    }
}

fn default_fim_limit() -> usize {
    DEFAULT_SIZE_LIMIT
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FimSection {
    pub height: usize,
    pub width: usize,
    #[serde(default = "default_fim_limit")]
    pub size_limit: usize,
}

fn default_output_dir() -> PathBuf {
    "out".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub scene: SceneSource,
    pub degradation: DegradationSpec,
    pub unmix: UnmixConfig,
    #[serde(default)]
    pub fusion: FusionSection,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub metrics: MetricsSection,
    #[serde(default)]
    pub fim: Option<FimSection>,
}

/// A parsed configuration together with where it came from.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    /// Directory that relative paths in the config resolve against.
    pub base_dir: PathBuf,
    pub output_dir: PathBuf,
    pub config_hash: String,
}

impl Experiment {
    pub fn load(path: &Path, out_override: Option<&Path>) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_json(&text, path, &base, out_override)
    }

    /// Parses `text`; `origin` only labels error messages.
    pub fn from_json(text: &str, origin: &Path, base_dir: &Path, out_override: Option<&Path>) -> Result<Self> {
        let config: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::new(config, base_dir, out_override)
    }

    pub fn new(config: ExperimentConfig, base_dir: &Path, out_override: Option<&Path>) -> Result<Self> {
        config.degradation.validate()?;
        config.unmix.validate()?;
        config.solver.validate()?;
        let output_dir = match out_override {
            Some(p) => p.to_path_buf(),
            None => base_dir.join(&config.output_dir),
        };
        let mut hashed = config.clone();
        hashed.output_dir = PathBuf::new();
        let canonical = serde_json::to_vec(&hashed).expect("config serializes");
        Ok(Self {
            config,
            base_dir: base_dir.to_path_buf(),
            output_dir,
            config_hash: sha256_hex(&canonical),
        })
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        self.base_dir.join(p)
    }

    fn out(&self, name: impl AsRef<Path>) -> PathBuf {
        self.output_dir.join(name)
    }

    fn tag(&self) -> String {
        format!("mbfuse config_hash={}", self.config_hash)
    }

    fn csv_header(&self) -> String {
        format!("# config_hash={}\n", self.config_hash)
    }

    fn ensure_out(&self) -> Result<()> {
        fs::create_dir_all(&self.output_dir).map_err(|e| Error::io(&self.output_dir, e))
    }

    fn write_raster(&self, img: &MultibandImage, name: &str) -> Result<PathBuf> {
        let p = self.out(name);
        write_raster_with(img, &p, Some(&self.tag()))?;
        Ok(p)
    }

    fn write_csv(&self, name: &str, body: &str) -> Result<PathBuf> {
        let p = self.out(name);
        write_text(&p, &format!("{}{}", self.csv_header(), body))?;
        Ok(p)
    }
}

/// One entry of `models.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProductRecord {
    pub name: String,
    pub file: String,
    pub model: ObservationModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelsFile {
    pub config_hash: String,
    pub reference: String,
    pub products: Vec<ProductRecord>,
}

/// Loads or synthesizes the reference image (and, for synthetic scenes,
/// the true endmembers and abundances).
pub fn reference_scene(
    exp: &Experiment,
    grid_override: Option<Grid>,
) -> Result<(MultibandImage, Option<(EndmemberMatrix, AbundanceMap)>)> {
    match &exp.config.scene {
        SceneSource::Synthetic(cfg) => {
            let mut cfg = cfg.clone();
            if let Some(g) = grid_override {
                cfg.height = g.height;
                cfg.width = g.width;
            }
            let s = generate(&cfg)?;
            Ok((s.image, Some((s.endmembers, s.abundances))))
        }
        SceneSource::Reference(path) => {
            let img = read_raster(&exp.resolve(path))?;
            match grid_override {
                None => Ok((img, None)),
                Some(g) => {
                    ensure!(
                        g.height <= img.height() && g.width <= img.width(),
                        InvalidArgument,
                        "requested {g} crop exceeds the {} reference",
                        img.grid()
                    );
                    let field = img
                        .data()
                        .to_owned()
                        .into_shape_with_order((img.bands(), img.height(), img.width()))
                        .expect("bands × pixels");
                    let crop = field
                        .slice(s![.., ..g.height, ..g.width])
                        .to_owned()
                        .into_shape_with_order((img.bands(), g.pixels()))
                        .expect("contiguous crop");
                    Ok((MultibandImage::new(g, crop)?, None))
                }
            }
        }
    }
}

/// `mbfuse degrade`: writes the reference, the degraded products and
/// `models.json`; synthetic scenes also get their ground truth.
pub fn cmd_degrade(exp: &Experiment) -> Result<Vec<PathBuf>> {
    let (reference, truth) = reference_scene(exp, None)?;
    let products = degrade_wald(&reference, &exp.config.degradation)?;
    exp.ensure_out()?;
    let mut written = vec![exp.write_raster(&reference, "reference.img")?];
    if let Some((e, a)) = &truth {
        let p = exp.out("endmembers_true.csv");
        write_text(&p, &endmembers_csv(e, Some(&format!("config_hash={}", exp.config_hash))))?;
        written.push(p);
        let amap = MultibandImage::new(a.grid(), a.data().clone())?;
        written.push(exp.write_raster(&amap, "abundances_true.img")?);
    }
    let mut records = Vec::new();
    for p in &products {
        let file = format!("{}.img", p.name);
        written.push(exp.write_raster(&p.image, &file)?);
        records.push(ProductRecord {
            name: p.name.clone(),
            file,
            model: p.model.clone(),
        });
    }
    let models = ModelsFile {
        config_hash: exp.config_hash.clone(),
        reference: "reference.img".into(),
        products: records,
    };
    let path = exp.out("models.json");
    let json = serde_json::to_string_pretty(&models).expect("models serialize");
    write_text(&path, &json)?;
    written.push(path);
    Ok(written)
}

/// Reads `models.json` and the product rasters it lists.
pub fn load_products(dir: &Path) -> Result<Vec<DegradedProduct>> {
    let path = dir.join("models.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let models: ModelsFile = serde_json::from_str(&text).map_err(|e| Error::Config {
        path: path.clone(),
        message: e.to_string(),
    })?;
    models
        .products
        .into_iter()
        .map(|r| {
            r.model.validate()?;
            let image = read_raster(&dir.join(&r.file))?;
            Ok(DegradedProduct {
                name: r.name,
                image,
                model: r.model,
            })
        })
        .collect()
}

/// Initialization, extraction and solver output of one fusion run.
#[derive(Debug, Clone)]
pub struct Fused {
    pub endmembers: EndmemberMatrix,
    pub init: AbundanceMap,
    pub result: FusionResult,
}

/// Index of the product used to extract endmembers and build `A⁽⁰⁾`: the
/// named one, or the one with the most bands (earliest on ties).
pub fn source_index(products: &[DegradedProduct], name: Option<&str>) -> Result<usize> {
    match name {
        Some(n) => products
            .iter()
            .position(|p| p.name == n)
            .ok_or_else(|| Error::InvalidArgument(format!("no product named `{n}`"))),
        None => {
            ensure!(!products.is_empty(), InvalidArgument, "no products to fuse");
            let best = products.iter().map(|p| p.image.bands()).max().unwrap_or(0);
            Ok(products.iter().position(|p| p.image.bands() == best).unwrap_or(0))
        }
    }
}

/// Full pipeline on in-memory products: extract (unless `endmembers` is
/// given), unmix and upscale the source product, then solve.
pub fn fuse_products(
    products: &[DegradedProduct],
    source: usize,
    endmembers: Option<EndmemberMatrix>,
    unmix: &UnmixConfig,
    solver: &SolverConfig,
) -> Result<Fused> {
    let src = products
        .get(source)
        .ok_or_else(|| Error::InvalidArgument(format!("source index {source} out of range")))?;
    ensure!(
        src.model.response.output_bands() == src.model.response.input_bands(),
        InvalidArgument,
        "source product `{}` must observe every band ({} of {})",
        src.name,
        src.model.response.output_bands(),
        src.model.response.input_bands()
    );
    let e = match endmembers {
        Some(e) => e,
        None => extract_endmembers(&src.image, unmix.endmembers)?,
    };
    ensure!(
        e.endmembers() == unmix.endmembers,
        Dimension,
        "endmember matrix has {} columns, unmix.endmembers is {}",
        e.endmembers(),
        unmix.endmembers
    );
    let init = init_abundances(&src.image, &e, src.model.ratio(), unmix)?;
    let images: Vec<_> = products.iter().map(|p| p.image.clone()).collect();
    let models: Vec<_> = products.iter().map(|p| p.model.clone()).collect();
    let result = solve(&images, &models, &e, &init, solver)?;
    Ok(Fused {
        endmembers: e,
        init,
        result,
    })
}

/// `mbfuse fuse`: writes `fused.img`, `abundances.img`, `init_fused.img`,
/// `endmembers.csv` and `diagnostics.csv`.
pub fn cmd_fuse(exp: &Experiment) -> Result<Vec<PathBuf>> {
    let products = load_products(&exp.output_dir)?;
    let src = source_index(&products, exp.config.fusion.source.as_deref())?;
    let e = match &exp.config.fusion.endmember_file {
        Some(p) => Some(read_endmembers(&exp.resolve(p))?),
        None => None,
    };
    let fused = match fuse_products(&products, src, e, &exp.config.unmix, &exp.config.solver) {
        Ok(f) => f,
        Err(Error::Diverged {
            iteration,
            reason,
            diagnostics,
        }) => {
            exp.write_csv("diagnostics.csv", &diagnostics.to_csv())?;
            return Err(Error::Diverged {
                iteration,
                reason,
                diagnostics,
            });
        }
        Err(e) => return Err(e),
    };
    let mut written = Vec::new();
    written.push(exp.write_raster(&fused.result.fused, "fused.img")?);
    let a = &fused.result.abundances;
    written.push(exp.write_raster(&MultibandImage::new(a.grid(), a.data().clone())?, "abundances.img")?);
    written.push(exp.write_raster(&mix(&fused.endmembers, &fused.init)?, "init_fused.img")?);
    let p = exp.out("endmembers.csv");
    write_text(&p, &endmembers_csv(&fused.endmembers, Some(&format!("config_hash={}", exp.config_hash))))?;
    written.push(p);
    written.push(exp.write_csv("diagnostics.csv", &fused.result.diagnostics.to_csv())?);
    Ok(written)
}

fn max_ratio(exp: &Experiment) -> f64 {
    exp.config
        .degradation
        .outputs
        .iter()
        .map(|o| o.ratio)
        .max()
        .unwrap_or(1) as f64
}

/// Metrics for every configured estimate, on all bands and, when a subset
/// response is configured, on the bands it covers.
pub fn compute_metrics(exp: &Experiment) -> Result<Vec<(String, MetricsReport)>> {
    let m = &exp.config.metrics;
    let ref_path = match &m.reference {
        Some(p) => exp.resolve(p),
        None => exp.out("reference.img"),
    };
    let reference = read_raster(&ref_path)?;
    let params = MetricsParams {
        ergas_ratio: m.ergas_ratio.unwrap_or_else(|| max_ratio(exp)),
        q_window: m.q_window,
    };
    let subset = match &m.subset_response {
        Some(name) => {
            let spec = exp
                .config
                .degradation
                .outputs
                .iter()
                .find(|o| &o.name == name)
                .ok_or_else(|| Error::InvalidArgument(format!("subset_response: no output named `{name}`")))?;
            Some((name.clone(), spec.response.build(reference.bands())?))
        }
        None => None,
    };
    let mut out = Vec::new();
    for est in &m.estimates {
        let path = if est.is_absolute() { est.clone() } else { exp.out(est) };
        let estimate = read_raster(&path)?;
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "estimate".into());
        out.push((stem.clone(), evaluate(&reference, &estimate, &params, "all")?));
        if let Some((name, resp)) = &subset {
            let r = select_bands(&reference, resp, m.band_subset_threshold)?;
            let e = select_bands(&estimate, resp, m.band_subset_threshold)?;
            out.push((format!("{stem}_{name}"), evaluate(&r, &e, &params, name)?));
        }
    }
    Ok(out)
}

/// `mbfuse metrics`: `metrics_<tag>.csv` and `nrmse_<tag>.csv` per report.
pub fn cmd_metrics(exp: &Experiment) -> Result<Vec<PathBuf>> {
    let reports = compute_metrics(exp)?;
    exp.ensure_out()?;
    let mut written = Vec::new();
    for (tag, r) in &reports {
        written.push(exp.write_csv(&format!("metrics_{tag}.csv"), &r.to_csv())?);
        written.push(exp.write_csv(&format!("nrmse_{tag}.csv"), &r.nrmse_csv())?);
    }
    Ok(written)
}

/// `mbfuse fim`: dense Fisher analysis of the configured sensors on a small
/// crop of the scene. Returns the text report (also written to
/// `fim_report.txt`).
pub fn cmd_fim(exp: &Experiment) -> Result<String> {
    let f = exp
        .config
        .fim
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("config has no `fim` section".into()))?;
    let grid = Grid::new(f.height, f.width);
    let size = grid.pixels() * exp.config.unmix.endmembers;
    if size > f.size_limit {
        return Err(Error::SizeLimit {
            size,
            limit: f.size_limit,
        });
    }
    let (reference, truth) = reference_scene(exp, Some(grid))?;
    let products = degrade_wald(&reference, &exp.config.degradation)?;
    let e = match (&exp.config.fusion.endmember_file, truth) {
        (Some(p), _) => read_endmembers(&exp.resolve(p))?,
        (None, Some((e, _))) if e.endmembers() == exp.config.unmix.endmembers => e,
        _ => extract_endmembers(&reference, exp.config.unmix.endmembers)?,
    };
    let models: Vec<_> = products.iter().map(|p| p.model.clone()).collect();
    let report = compute_fim(&models, &e, grid, f.size_limit)?;
    let holds = sufficient_condition(&models, &e, grid);
    let dim = report.dimension();
    let mut text = format!("# config_hash={}\n", exp.config_hash);
    text.push_str(&format!(
        "grid: {grid}\nendmembers: {}\nproducts: {}\n",
        e.endmembers(),
        products.iter().map(|p| p.name.as_str()).collect::<Vec<_>>().join(", ")
    ));
    text.push_str(&format!(
        "FIM rank: {} of {dim} (deficit {})\n",
        report.numerical_rank,
        dim - report.numerical_rank
    ));
    text.push_str(&format!(
        "sufficient condition: {}\n",
        if holds { "holds" } else { "fails" }
    ));
    let verdict = match (report.is_full_rank(), holds) {
        (true, true) => "identifiable (sufficient condition holds)",
        (true, false) => "identifiable (full-rank FIM; sufficient condition fails)",
        (false, _) => "not identifiable (sufficient condition fails)",
    };
    text.push_str(&format!("verdict: {verdict}\n"));
    if report.is_full_rank() {
        text.push_str(&format!("CRLB trace: {:e}\n", crlb_trace(&report)?));
    } else {
        text.push_str("CRLB: unbounded (singular FIM)\n");
    }
    exp.ensure_out()?;
    write_text(&exp.out("fim_report.txt"), &text)?;
    Ok(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "scene": {"synthetic": {"height": 8, "width": 8, "bands": 6, "endmembers": 2}},
        "degradation": {"seed": 1, "outputs": [
            {"name": "hs", "response": "identity", "ratio": 2, "snr_db": 30}
        ]},
        "unmix": {"endmembers": 2}
    }"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let exp = Experiment::from_json(MINIMAL, Path::new("x.json"), Path::new("/tmp/base"), None).unwrap();
        assert_eq!(exp.config.solver, SolverConfig::default());
        assert_eq!(exp.output_dir, Path::new("/tmp/base/out"));
        assert_eq!(exp.config_hash.len(), 64);
    }

    #[test]
    fn unknown_key_is_located() {
        let bad = MINIMAL.replace("\"unmix\"", "\"unmixx\"");
        let err = Experiment::from_json(&bad, Path::new("x.json"), Path::new("."), None).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("unmixx") && msg.contains("line"), "{msg}");
    }

    #[test]
    fn hash_ignores_output_dir() {
        let a = Experiment::from_json(MINIMAL, Path::new("x"), Path::new("."), None).unwrap();
        let b = Experiment::from_json(MINIMAL, Path::new("x"), Path::new("."), Some(Path::new("/elsewhere"))).unwrap();
        assert_eq!(a.config_hash, b.config_hash);
        let c = MINIMAL.replace("\"seed\": 1", "\"seed\": 2");
        let c = Experiment::from_json(&c, Path::new("x"), Path::new("."), None).unwrap();
        assert_ne!(a.config_hash, c.config_hash);
    }
}
