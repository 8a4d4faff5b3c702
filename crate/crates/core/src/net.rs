//! Feature encoder, projection head and regressor.
//!
//! All three are stacks of affine layers with relu activations, stored as
//! `[fan_in, fan_out]` weight matrices plus bias vectors in a [`ParamSet`].
//! The encoder applies its layers to every patch point independently and
//! max-pools over points, which makes the feature invariant to point order.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Vec3, PATCH_SIZE};
use crate::seed;
use crate::tensor::{ParamSet, Parameter, Tape, Tensor, Var, WeightDocument, WEIGHT_FORMAT_VERSION};

pub const FEATURE_DIM: usize = 1024;
pub const PROJECTION_DIM: usize = 256;

pub const ENCODER_WIDTHS: [usize; 6] = [3, 64, 128, 256, 512, FEATURE_DIM];
pub const PROJECTION_WIDTHS: [usize; 4] = [FEATURE_DIM, 512, 256, PROJECTION_DIM];
pub const REGRESSOR_WIDTHS: [usize; 6] = [FEATURE_DIM, 512, 256, 128, 64, 6];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    Encoder,
    Projection,
    Regressor,
}

impl Component {
    pub fn as_str(self) -> &'static str {
        match self {
            Component::Encoder => "encoder",
            Component::Projection => "projection",
            Component::Regressor => "regressor",
        }
    }

    fn widths(self) -> &'static [usize] {
        match self {
            Component::Encoder => &ENCODER_WIDTHS,
            Component::Projection => &PROJECTION_WIDTHS,
            Component::Regressor => &REGRESSOR_WIDTHS,
        }
    }

    fn tag(self) -> u64 {
        match self {
            Component::Encoder => 1,
            Component::Projection => 2,
            Component::Regressor => 3,
        }
    }

    /// Parameter names and shapes in layer order.
    pub fn layout(self) -> Vec<(String, Vec<usize>)> {
        let w = self.widths();
        (0..w.len() - 1)
            .flat_map(|i| {
                [
                    (format!("{}.layer{i}.weight", self.as_str()), vec![w[i], w[i + 1]]),
                    (format!("{}.layer{i}.bias", self.as_str()), vec![w[i + 1]]),
                ]
            })
            .collect()
    }
}

/// Affine stack shared by the three networks.
#[derive(Debug, Clone, PartialEq)]
struct Mlp {
    component: Component,
    params: ParamSet,
}

impl Mlp {
    /// Weights uniform in ±1/√fan_in, biases zero.
    fn init(component: Component, seed: u64) -> Self {
        let mut rng = seed::rng(seed, &[component.tag()]);
        let mut params = ParamSet::new();
        for (name, shape) in component.layout() {
            let n: usize = shape.iter().product();
            let values = if shape.len() == 2 {
                let bound = 1.0 / (shape[0] as f64).sqrt();
                (0..n).map(|_| rng.random_range(-bound..bound)).collect()
            } else {
                vec![0.0; n]
            };
            let value = Tensor::new(shape, values).expect("layout shapes are consistent");
            params.push(Parameter::new(name, value)).expect("layout names are unique");
        }
        Self { component, params }
    }

    fn zeros(component: Component) -> Self {
        let mut params = ParamSet::new();
        for (name, shape) in component.layout() {
            params
                .push(Parameter::new(name, Tensor::zeros(&shape)))
                .expect("layout names are unique");
        }
        Self { component, params }
    }

    fn from_document(component: Component, doc: &WeightDocument) -> Result<Self> {
        if doc.component.as_deref() != Some(component.as_str()) {
            return Err(Error::Data(format!(
                "expected {} weights, document is tagged {:?}",
                component.as_str(),
                doc.component
            )));
        }
        Ok(Self {
            component,
            params: ParamSet::from_document(doc, &component.layout())?,
        })
    }

    fn layers(&self) -> usize {
        self.component.widths().len() - 1
    }

    /// Runs every layer, applying relu after all but the last.
    fn forward(&self, tape: &mut Tape<'_>, vars: &[Var], mut x: Var) -> Result<Var> {
        if vars.len() != 2 * self.layers() {
            return Err(Error::InvalidShape(format!(
                "{} bound variables for {} layers",
                vars.len(),
                self.layers()
            )));
        }
        for layer in 0..self.layers() {
            x = tape.affine(x, vars[2 * layer], vars[2 * layer + 1])?;
            if layer + 1 < self.layers() {
                x = tape.relu(x);
            }
        }
        Ok(x)
    }
}

macro_rules! weights_common {
    ($ty:ident, $component:expr) => {
        impl $ty {
            pub const COMPONENT: Component = $component;

            /// Fresh weights, reproducible per seed.
            pub fn init(seed: u64) -> Self {
                Self(Mlp::init($component, seed))
            }

            /// All weights and biases zero.
            pub fn zeros() -> Self {
                Self(Mlp::zeros($component))
            }

            pub fn params(&self) -> &ParamSet {
                &self.0.params
            }

            pub fn params_mut(&mut self) -> &mut ParamSet {
                &mut self.0.params
            }

            /// Binds the weights as trainable leaves.
            pub fn bind<'a>(&'a self, tape: &mut Tape<'a>) -> Vec<Var> {
                self.0.params.bind(tape)
            }

            /// Binds the weights as constants; no gradients reach them.
            pub fn bind_frozen<'a>(&'a self, tape: &mut Tape<'a>) -> Vec<Var> {
                self.0.params.bind_frozen(tape)
            }

            pub fn to_document(&self) -> WeightDocument {
                self.0.params.to_document(Some($component.as_str()))
            }

            pub fn from_document(doc: &WeightDocument) -> Result<Self> {
                Mlp::from_document($component, doc).map(Self)
            }

            pub fn digest(&self) -> String {
                self.0.params.digest()
            }
        }
    };
}

/// Per-point shared layers 3→64→128→256→512→1024 and a max pool over points.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderWeights(Mlp);

/// Layers 1024→512→256→256 followed by L2 normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionWeights(Mlp);

/// Layers 1024→512→256→128→64→6: displacement and raw normal.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressorWeights(Mlp);

weights_common!(EncoderWeights, Component::Encoder);
weights_common!(ProjectionWeights, Component::Projection);
weights_common!(RegressorWeights, Component::Regressor);

/// `[n, 3]` tensor of patch points.
pub fn points_tensor(points: &[Vec3]) -> Tensor {
    let data = points.iter().flat_map(|p| [p.x, p.y, p.z]).collect();
    Tensor::matrix(points.len(), 3, data).expect("three values per point")
}

fn check_feature(feature: &[f64]) -> Result<()> {
    if feature.len() != FEATURE_DIM {
        return Err(Error::InvalidShape(format!(
            "feature has {} values, expected {FEATURE_DIM}",
            feature.len()
        )));
    }
    Ok(())
}

impl EncoderWeights {
    /// `[PATCH_SIZE, 3]` points to a `[FEATURE_DIM]` feature.
    pub fn forward(&self, tape: &mut Tape<'_>, vars: &[Var], points: Var) -> Result<Var> {
        let shape = tape.value(points).shape();
        if shape != [PATCH_SIZE, 3] {
            return Err(Error::InvalidShape(format!(
                "encoder input has shape {shape:?}, expected [{PATCH_SIZE}, 3]"
            )));
        }
        let per_point = self.0.forward(tape, vars, points)?;
        tape.max_over_rows(per_point)
    }

    pub fn encode(&self, points: &[Vec3]) -> Result<Vec<f64>> {
        if points.len() != PATCH_SIZE {
            return Err(Error::InvalidShape(format!(
                "patch has {} points, expected {PATCH_SIZE}",
                points.len()
            )));
        }
        let mut tape = Tape::new();
        let vars = self.bind_frozen(&mut tape);
        let x = tape.constant(points_tensor(points));
        let f = self.forward(&mut tape, &vars, x)?;
        Ok(tape.value(f).data().to_vec())
    }
}

/// Unit-norm projection of a feature.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub z: Vec<f64>,
    /// The pre-normalization output was zero; `z` is the fallback basis vector.
    pub fell_back: bool,
}

impl ProjectionWeights {
    pub fn forward(&self, tape: &mut Tape<'_>, vars: &[Var], feature: Var) -> Result<Var> {
        let raw = self.0.forward(tape, vars, feature)?;
        tape.l2_normalize(raw)
    }

    pub fn project(&self, feature: &[f64]) -> Result<Projection> {
        check_feature(feature)?;
        let mut tape = Tape::new();
        let vars = self.bind_frozen(&mut tape);
        let x = tape.constant(Tensor::vector(feature.to_vec()));
        let z = self.forward(&mut tape, &vars, x)?;
        Ok(Projection {
            z: tape.value(z).data().to_vec(),
            fell_back: tape.normalize_fell_back(z),
        })
    }
}

/// Regressor output in the canonical patch frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Regression {
    pub displacement: Vec3,
    /// Unit normal.
    pub normal: Vec3,
    /// The raw normal was zero; `normal` is +z.
    pub fell_back: bool,
}

/// Tape handles for a regressor pass.
#[derive(Debug, Clone, Copy)]
pub struct RegressionVars {
    pub displacement: Var,
    pub normal: Var,
}

fn vec3_of(t: &Tensor) -> Vec3 {
    Vec3::from_column_slice(t.data())
}

impl RegressorWeights {
    pub fn forward(&self, tape: &mut Tape<'_>, vars: &[Var], feature: Var) -> Result<RegressionVars> {
        let raw = self.0.forward(tape, vars, feature)?;
        let displacement = tape.slice(raw, 0, 3)?;
        let raw_normal = tape.slice(raw, 3, 3)?;
        let normal = tape.l2_normalize(raw_normal)?;
        Ok(RegressionVars {
            displacement,
            normal,
        })
    }

    pub fn regress(&self, feature: &[f64]) -> Result<Regression> {
        check_feature(feature)?;
        let mut tape = Tape::new();
        let vars = self.bind_frozen(&mut tape);
        let x = tape.constant(Tensor::vector(feature.to_vec()));
        let out = self.forward(&mut tape, &vars, x)?;
        Ok(Regression {
            displacement: vec3_of(tape.value(out.displacement)),
            normal: vec3_of(tape.value(out.normal)),
            fell_back: tape.normalize_fell_back(out.normal),
        })
    }
}

/// Several components in one versioned JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightBundle {
    pub format_version: u32,
    pub components: Vec<WeightDocument>,
}

impl WeightBundle {
    pub fn new(components: Vec<WeightDocument>) -> Self {
        Self {
            format_version: WEIGHT_FORMAT_VERSION,
            components,
        }
    }

    pub fn component(&self, component: Component) -> Option<&WeightDocument> {
        self.components
            .iter()
            .find(|d| d.component.as_deref() == Some(component.as_str()))
    }

    fn require(&self, component: Component) -> Result<&WeightDocument> {
        self.component(component)
            .ok_or_else(|| Error::Data(format!("weight file has no {} component", component.as_str())))
    }

    pub fn encoder(&self) -> Result<EncoderWeights> {
        EncoderWeights::from_document(self.require(Component::Encoder)?)
    }

    pub fn projection(&self) -> Result<ProjectionWeights> {
        ProjectionWeights::from_document(self.require(Component::Projection)?)
    }

    pub fn regressor(&self) -> Result<RegressorWeights> {
        RegressorWeights::from_document(self.require(Component::Regressor)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let bundle: WeightBundle =
            serde_json::from_str(text).map_err(|e| Error::Data(format!("weight file: {e}")))?;
        if bundle.format_version != WEIGHT_FORMAT_VERSION {
            return Err(Error::Data(format!(
                "unsupported weight format version {}",
                bundle.format_version
            )));
        }
        Ok(bundle)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
