//! Loading the system a command works on: a bundled scenario or a file.

use std::path::{Path, PathBuf};

use daeident::linear::LinearDae;
use daeident::model::DaeModel;
use daeident::ranktest::EvalPoint;
use daeident::scenarios::{self, Scenario, System};
use daeident::sim::{self, Trajectory};
use daeident::{Error, Result};

#[derive(clap::Args, Debug, Clone)]
pub struct Source {
    /// Model file (JSON); files with a `scenario` block load as scenarios.
    #[arg(conflicts_with = "scenario", required_unless_present = "scenario")]
    pub model: Option<PathBuf>,
    /// Bundled scenario name.
    #[arg(long)]
    pub scenario: Option<String>,
    /// Scenario sensor selecting the outputs.
    #[arg(long)]
    pub sensor: Option<String>,
    /// Output expressions replacing those of the model.
    #[arg(long, num_args = 1.., conflicts_with = "sensor")]
    pub outputs: Vec<String>,
}

pub enum Input {
    Scenario(Box<Scenario>),
    Dae(DaeModel),
    Linear(LinearDae),
}

impl Input {
    pub fn load(src: &Source) -> Result<Input> {
        if let Some(name) = &src.scenario {
            return Ok(Input::Scenario(Box::new(scenarios::load(name)?)));
        }
        let path = src.model.as_deref().ok_or_else(|| Error::Usage("a model file or --scenario is required".into()))?;
        Input::from_path(path)
    }

    fn from_path(path: &Path) -> Result<Input> {
        let text = std::fs::read_to_string(path)?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        if value.get("scenario").is_some() {
            let mut s = Scenario::from_json(&text)?;
            if s.name.is_empty() {
                s.name = path.file_stem().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
            }
            Ok(Input::Scenario(Box::new(s)))
        } else if value.get("A").is_some() {
            Ok(Input::Linear(LinearDae::from_path(path)?))
        } else {
            Ok(Input::Dae(DaeModel::from_json(&text)?))
        }
    }

    pub fn name(&self) -> String {
        match self {
            Input::Scenario(s) => s.name.clone(),
            Input::Dae(m) => m.name().to_string(),
            Input::Linear(d) => d.name.clone(),
        }
    }

    pub fn scenario(&self) -> Option<&Scenario> {
        match self {
            Input::Scenario(s) => Some(s),
            _ => None,
        }
    }

    /// The symbolic model measured by the selected sensor or outputs.
    pub fn model(&self, src: &Source) -> Result<DaeModel> {
        let m = match (self, &src.sensor) {
            (Input::Scenario(s), Some(sensor)) => s.model_for(sensor)?,
            (Input::Scenario(s), None) => s.model()?,
            (Input::Dae(m), None) => m.clone(),
            (Input::Linear(d), None) => d.to_dae_model()?,
            (_, Some(_)) => return Err(Error::Usage("--sensor needs a scenario".into())),
        };
        if src.outputs.is_empty() {
            Ok(m)
        } else {
            m.with_outputs(&src.outputs)
        }
    }

    /// The linear system measured by the selected sensor.
    pub fn linear(&self, src: &Source) -> Result<LinearDae> {
        if !src.outputs.is_empty() {
            return Err(Error::Usage("linear systems take their outputs from C or a scenario sensor".into()));
        }
        match (self, &src.sensor) {
            (Input::Scenario(s), Some(sensor)) => s.linear_for(sensor),
            (Input::Scenario(s), None) => match &s.system {
                System::Linear(d) => Ok(d.clone()),
                System::Dae(_) => Err(Error::Usage(format!("scenario {} is not linear", s.name))),
            },
            (Input::Linear(d), None) => Ok(d.clone()),
            (Input::Linear(_), Some(_)) => Err(Error::Usage("--sensor needs a scenario".into())),
            (Input::Dae(_), _) => Err(Error::Usage("the model is not linear".into())),
        }
    }

    pub fn is_linear(&self) -> bool {
        match self {
            Input::Scenario(s) => matches!(s.system, System::Linear(_)),
            Input::Dae(_) => false,
            Input::Linear(_) => true,
        }
    }

    pub fn default_t_span(&self) -> Option<(f64, f64)> {
        self.scenario().map(Scenario::t_span)
    }

    pub fn default_dt(&self) -> f64 {
        self.scenario().map_or(1e-3, |s| s.settings.dt)
    }

    /// Trajectory with derivative arrays up to `sigma`.
    pub fn trajectory(&self, sigma: usize, t_span: Option<(f64, f64)>, dt: Option<f64>) -> Result<Trajectory> {
        let dt = dt.unwrap_or_else(|| self.default_dt());
        let span = || t_span.ok_or_else(|| Error::Usage("model files need --tspan".into()));
        match self {
            Input::Scenario(s) => s.trajectory(sigma, t_span, Some(dt)),
            Input::Dae(m) => {
                let x0 = m.initial_condition().ok_or_else(|| Error::InvalidModel("no initial condition".into()))?;
                let mut tr = sim::simulate_index1(m, x0, span()?, dt)?;
                sim::attach_derivatives(m, &mut tr, sigma)?;
                Ok(tr)
            }
            Input::Linear(d) => {
                let x1 = d.initial_differential.as_ref().ok_or_else(|| Error::InvalidModel("no initial_differential".into()))?;
                d.trajectory(x1, span()?, dt, sigma)
            }
        }
    }

    /// Nominal values of `theta` from the model's parameter table.
    pub fn theta_values(&self, model: &DaeModel, theta: &[String]) -> Result<Vec<f64>> {
        theta
            .iter()
            .map(|n| {
                model.parameter_index(n).ok_or_else(|| Error::UnknownParameter(n.clone()))?;
                model.parameter_value(n).ok_or_else(|| Error::Usage(format!("parameter {n} has no nominal value")))
            })
            .collect()
    }
}

pub fn read_point(path: &Path) -> Result<EvalPoint> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}
