//! The bundled example systems with their study settings and expected labels.

use indexmap::IndexMap;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linear::LinearDae;
use crate::model::DaeModel;
use crate::ranktest::EvalPoint;
use crate::sim::{self, PendulumParams, Trajectory};

pub const NAMES: [&str; 5] = ["reactor", "pendulum", "linear4", "linear4-sparse", "linear4-ode"];

fn fixture(name: &str) -> Option<&'static str> {
    Some(match name {
        "reactor" => include_str!("../fixtures/reactor.json"),
        "pendulum" => include_str!("../fixtures/pendulum.json"),
        "linear4" => include_str!("../fixtures/linear4.json"),
        "linear4-sparse" => include_str!("../fixtures/linear4-sparse.json"),
        "linear4-ode" => include_str!("../fixtures/linear4-ode.json"),
        _ => return None,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Release {
    pub phi0: f64,
    pub omega0: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Index1,
    Pendulum,
    Linear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Expected {
    pub theta: String,
    pub sensor: String,
    pub region: String,
    pub label: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlotSpec {
    pub x: String,
    pub y: String,
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
}

/// The `scenario` block of a fixture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub kind: Kind,
    pub t_span: [f64; 2],
    pub dt: f64,
    /// Samples before this time are excluded from limit-cycle statistics.
    #[serde(default)]
    pub transient_end: Option<f64>,
    #[serde(default)]
    pub release: Option<Release>,
    pub sensors: IndexMap<String, Vec<String>>,
    pub theta_sets: IndexMap<String, Vec<String>>,
    #[serde(default)]
    pub expected: Vec<Expected>,
    #[serde(default)]
    pub plot: Option<PlotSpec>,
}

#[derive(Deserialize)]
struct Envelope {
    scenario: Settings,
}

#[derive(Clone, Debug)]
pub enum System {
    Dae(DaeModel),
    Linear(LinearDae),
}

#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: String,
    pub system: System,
    pub settings: Settings,
}

impl Scenario {
    /// Parses a fixture: a model file (or linear model file) with a `scenario` block.
    pub fn from_json(text: &str) -> Result<Scenario> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let settings = serde_json::from_value::<Envelope>(value.clone())?.scenario;
        let system = if value.get("A").is_some() {
            System::Linear(LinearDae::from_json(text)?)
        } else {
            System::Dae(DaeModel::from_json(text)?)
        };
        let name = value.get("name").and_then(|v| v.as_str()).unwrap_or_default().to_string();
        Ok(Scenario { name, system, settings })
    }

    /// The symbolic model with its default outputs.
    pub fn model(&self) -> Result<DaeModel> {
        match &self.system {
            System::Dae(m) => Ok(m.clone()),
            System::Linear(d) => d.to_dae_model(),
        }
    }

    pub fn sensor(&self, name: &str) -> Result<&[String]> {
        self.settings
            .sensors
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Usage(format!("scenario {} has no sensor {name:?}", self.name)))
    }

    pub fn theta_set(&self, name: &str) -> Result<&[String]> {
        self.settings
            .theta_sets
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Usage(format!("scenario {} has no theta set {name:?}", self.name)))
    }

    /// The model measured by `sensor`.
    pub fn model_for(&self, sensor: &str) -> Result<DaeModel> {
        match &self.system {
            System::Dae(m) => m.with_outputs(self.sensor(sensor)?),
            System::Linear(_) => self.linear_for(sensor)?.to_dae_model(),
        }
    }

    /// The linear system measured by `sensor`, whose entries must be state names.
    pub fn linear_for(&self, sensor: &str) -> Result<LinearDae> {
        let System::Linear(d) = &self.system else {
            return Err(Error::Usage(format!("scenario {} is not linear", self.name)));
        };
        let names = self.sensor(sensor)?;
        let n = d.n();
        let mut c = DMatrix::zeros(names.len(), n);
        for (r, s) in names.iter().enumerate() {
            let j = (1..=n)
                .position(|i| format!("x{i}") == *s)
                .ok_or_else(|| Error::Usage(format!("linear sensors list state names, got {s:?}")))?;
            c[(r, j)] = 1.0;
        }
        d.with_output(c)
    }

    pub fn t_span(&self) -> (f64, f64) {
        (self.settings.t_span[0], self.settings.t_span[1])
    }

    /// Simulated trajectory with derivative arrays up to `sigma`.
    pub fn trajectory(&self, sigma: usize, t_span: Option<(f64, f64)>, dt: Option<f64>) -> Result<Trajectory> {
        let t_span = t_span.unwrap_or(self.t_span());
        let dt = dt.unwrap_or(self.settings.dt);
        match (&self.system, self.settings.kind) {
            (System::Dae(m), Kind::Index1) => {
                let x0 = m.initial_condition().ok_or_else(|| Error::InvalidModel("no initial condition".into()))?;
                let mut tr = sim::simulate_index1(m, x0, t_span, dt)?;
                sim::attach_derivatives(m, &mut tr, sigma)?;
                Ok(tr)
            }
            (System::Dae(m), Kind::Pendulum) => {
                let r = self.settings.release.ok_or_else(|| Error::InvalidModel("pendulum scenario needs a release".into()))?;
                sim::simulate_pendulum(PendulumParams::from_model(m)?, r.phi0, r.omega0, t_span, dt, Some(sigma))
            }
            (System::Linear(d), Kind::Linear) => {
                let x1 = d.initial_differential.as_ref().ok_or_else(|| Error::InvalidModel("no initial_differential".into()))?;
                d.trajectory(x1, t_span, dt, sigma)
            }
            _ => Err(Error::InvalidModel(format!("scenario kind {:?} does not match its system", self.settings.kind))),
        }
    }

    /// Nominal values of a theta set.
    pub fn theta_values(&self, set: &str) -> Result<Vec<f64>> {
        let names = self.theta_set(set)?;
        let m = self.model()?;
        names
            .iter()
            .map(|n| m.parameter_value(n).ok_or_else(|| Error::UnknownParameter(n.clone())))
            .collect()
    }

    /// Evaluation points at every `stride`-th trajectory sample.
    pub fn points(&self, tr: &Trajectory, theta: &[f64], stride: usize) -> Result<Vec<EvalPoint>> {
        let stride = stride.max(1);
        (0..tr.len()).step_by(stride).map(|i| tr.point(i, theta)).collect()
    }
}

pub fn load(name: &str) -> Result<Scenario> {
    let text = fixture(name).ok_or_else(|| Error::UnknownScenario(name.to_string()))?;
    Scenario::from_json(text)
}
