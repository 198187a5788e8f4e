//! Scenario files: flat `section.key = value` lines, parsed as TOML and
//! flattened to dotted keys. Absent keys keep the values of
//! [`ScenarioConfig::default`].

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{Matrix2, Matrix4, Vector2, Vector3};
use toml::Value;

use crate::dynamics::{
    ControlInput, InputVector, StateMatrix, StateVector, UavState, VehicleParams,
};
use crate::geometry::{build_pixel_weight, CameraExtrinsics, CameraIntrinsics, EulerAngles, Pose};
use crate::nmpc::{MpcConfig, ObserverConfig};
use crate::perception::{DetectorNoise, GoalSpec};
use crate::sim::{PlantPerturbation, Scenario};
use crate::trajopt::{CostWeights, InputBounds};
use crate::Error;

/// Raw tunables, one field per configuration key.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub tf: f64,
    pub steps: usize,
    pub trials: usize,
    pub tf_list: Vec<f64>,
    pub settle_time: f64,
    pub inner_step: f64,
    pub init_state: [f64; 9],
    pub target_position: [f64; 3],
    pub target_yaw: f64,
    pub goal_offset: [f64; 3],
    pub goal_pixel: Option<[f64; 2]>,
    pub mass: f64,
    pub gravity: f64,
    pub drag_coeff: f64,
    pub tau_roll: f64,
    pub tau_pitch: f64,
    pub gain_roll: f64,
    pub gain_pitch: f64,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub camera_translation: [f64; 3],
    pub camera_mount: [f64; 3],
    pub sigma_pixel: f64,
    pub sigma_position: f64,
    pub sigma_yaw: f64,
    pub plant_mass_offset: f64,
    pub plant_drag_offset: f64,
    pub plant_external_force: [f64; 3],
    pub weights_q: [f64; 9],
    pub weights_r: [f64; 4],
    pub weights_p_scale: f64,
    pub weights_h_base: f64,
    pub u_min: [f64; 4],
    pub u_max: [f64; 4],
    pub planner_max_iterations: usize,
    pub mpc_horizon: usize,
    pub mpc_dt: f64,
    pub mpc_q: [f64; 9],
    pub mpc_r: [f64; 4],
    pub mpc_p_scale: f64,
    pub mpc_max_sqp_iterations: usize,
    pub observer_enabled: bool,
    pub observer_gain: f64,
    pub observer_max_force: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let bounds = InputBounds::default();
        Self {
            seed: 1,
            tf: 6.6,
            steps: 55,
            trials: 10,
            tf_list: vec![10.2, 7.5, 6.6, 5.1],
            settle_time: 2.0,
            inner_step: 1e-3,
            init_state: [8.0, -12.0, 14.0, 0.0, 0.0, 1.918, 0.0, 0.0, 0.0],
            target_position: [6.004644, 7.832017, 7.576879],
            target_yaw: 1.57,
            goal_offset: [0.0, 0.0, 6.0],
            goal_pixel: None,
            mass: 2.8,
            gravity: 9.81,
            drag_coeff: 0.016,
            tau_roll: 0.18,
            tau_pitch: 0.18,
            gain_roll: 1.0,
            gain_pitch: 1.0,
            fx: 460.0,
            fy: 460.0,
            cx: 376.0,
            cy: 240.0,
            width: 752,
            height: 480,
            camera_translation: [0.1, 0.0, -0.05],
            camera_mount: [0.0, 0.3, 0.0],
            sigma_pixel: 2.0,
            sigma_position: 0.05,
            sigma_yaw: 0.02,
            plant_mass_offset: 0.03,
            plant_drag_offset: 0.2,
            plant_external_force: [0.0; 3],
            weights_q: [0.1, 0.1, 0.1, 0.5, 0.5, 0.5, 0.1, 0.1, 0.1],
            weights_r: [5.0, 5.0, 5.0, 0.01],
            weights_p_scale: 100.0,
            weights_h_base: 1e-3,
            u_min: bounds.lower.to_vector().into(),
            u_max: bounds.upper.to_vector().into(),
            planner_max_iterations: 200,
            mpc_horizon: 20,
            mpc_dt: 0.02,
            mpc_q: [20.0, 20.0, 30.0, 1.0, 1.0, 8.0, 4.0, 4.0, 4.0],
            mpc_r: [2.0, 2.0, 2.0, 0.02],
            mpc_p_scale: 10.0,
            mpc_max_sqp_iterations: 5,
            observer_enabled: true,
            observer_gain: 0.1,
            observer_max_force: 10.0,
        }
    }
}

/// Every key a scenario file may set.
pub const KNOWN_KEYS: &[&str] = &[
    "scenario.seed",
    "scenario.tf",
    "scenario.steps",
    "scenario.trials",
    "scenario.tf_list",
    "scenario.settle_time",
    "scenario.inner_step",
    "init.state",
    "target.position",
    "target.yaw",
    "goal.offset",
    "goal.pixel",
    "vehicle.mass",
    "vehicle.gravity",
    "vehicle.drag_coeff",
    "vehicle.tau_roll",
    "vehicle.tau_pitch",
    "vehicle.gain_roll",
    "vehicle.gain_pitch",
    "camera.fx",
    "camera.fy",
    "camera.cx",
    "camera.cy",
    "camera.width",
    "camera.height",
    "camera.translation",
    "camera.mount",
    "noise.sigma_pixel",
    "noise.sigma_position",
    "noise.sigma_yaw",
    "plant.mass_offset",
    "plant.drag_offset",
    "plant.external_force",
    "weights.q",
    "weights.r",
    "weights.p_scale",
    "weights.h_base",
    "bounds.u_min",
    "bounds.u_max",
    "planner.max_iterations",
    "mpc.horizon",
    "mpc.dt",
    "mpc.q",
    "mpc.r",
    "mpc.p_scale",
    "mpc.max_sqp_iterations",
    "observer.enabled",
    "observer.gain",
    "observer.max_force",
];

fn flatten(prefix: &str, table: &toml::Table, out: &mut BTreeMap<String, Value>) {
    for (k, v) in table {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => {
                out.insert(key, other.clone());
            }
        }
    }
}

pub fn parse_flat(text: &str) -> Result<BTreeMap<String, Value>, Error> {
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    let mut out = BTreeMap::new();
    flatten("", &table, &mut out);
    Ok(out)
}

/// Parses a `key=value` override; the value uses the same syntax as the file.
pub fn parse_override(arg: &str) -> Result<(String, Value), Error> {
    let (key, raw) = arg
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {arg:?} is not of the form key=value")))?;
    let key = key.trim().to_string();
    let doc = format!("v = {}", raw.trim());
    let mut table: toml::Table = doc
        .parse()
        .map_err(|e: toml::de::Error| Error::Config(format!("{key}: {e}")))?;
    Ok((key, table.remove("v").expect("parsed key")))
}

fn number(key: &str, v: &Value) -> Result<f64, Error> {
    match v {
        Value::Float(f) => Ok(*f),
        Value::Integer(i) => Ok(*i as f64),
        _ => Err(Error::Config(format!("{key} must be a number"))),
    }
}

fn integer(key: &str, v: &Value) -> Result<u64, Error> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as u64),
        _ => Err(Error::Config(format!(
            "{key} must be a non-negative integer"
        ))),
    }
}

fn list(key: &str, v: &Value) -> Result<Vec<f64>, Error> {
    match v {
        Value::Array(a) => a.iter().map(|x| number(key, x)).collect(),
        _ => Err(Error::Config(format!("{key} must be an array of numbers"))),
    }
}

fn array<const N: usize>(key: &str, v: &Value) -> Result<[f64; N], Error> {
    let l = list(key, v)?;
    l.try_into()
        .map_err(|l: Vec<f64>| Error::Config(format!("{key} needs {N} numbers, got {}", l.len())))
}

impl ScenarioConfig {
    pub fn set(&mut self, key: &str, v: &Value) -> Result<(), Error> {
        match key {
            "scenario.seed" => self.seed = integer(key, v)?,
            "scenario.tf" => self.tf = number(key, v)?,
            "scenario.steps" => self.steps = integer(key, v)? as usize,
            "scenario.trials" => self.trials = integer(key, v)? as usize,
            "scenario.tf_list" => self.tf_list = list(key, v)?,
            "scenario.settle_time" => self.settle_time = number(key, v)?,
            "scenario.inner_step" => self.inner_step = number(key, v)?,
            "init.state" => self.init_state = array(key, v)?,
            "target.position" => self.target_position = array(key, v)?,
            "target.yaw" => self.target_yaw = number(key, v)?,
            "goal.offset" => self.goal_offset = array(key, v)?,
            "goal.pixel" => self.goal_pixel = Some(array(key, v)?),
            "vehicle.mass" => self.mass = number(key, v)?,
            "vehicle.gravity" => self.gravity = number(key, v)?,
            "vehicle.drag_coeff" => self.drag_coeff = number(key, v)?,
            "vehicle.tau_roll" => self.tau_roll = number(key, v)?,
            "vehicle.tau_pitch" => self.tau_pitch = number(key, v)?,
            "vehicle.gain_roll" => self.gain_roll = number(key, v)?,
            "vehicle.gain_pitch" => self.gain_pitch = number(key, v)?,
            "camera.fx" => self.fx = number(key, v)?,
            "camera.fy" => self.fy = number(key, v)?,
            "camera.cx" => self.cx = number(key, v)?,
            "camera.cy" => self.cy = number(key, v)?,
            "camera.width" => self.width = integer(key, v)? as u32,
            "camera.height" => self.height = integer(key, v)? as u32,
            "camera.translation" => self.camera_translation = array(key, v)?,
            "camera.mount" => self.camera_mount = array(key, v)?,
            "noise.sigma_pixel" => self.sigma_pixel = number(key, v)?,
            "noise.sigma_position" => self.sigma_position = number(key, v)?,
            "noise.sigma_yaw" => self.sigma_yaw = number(key, v)?,
            "plant.mass_offset" => self.plant_mass_offset = number(key, v)?,
            "plant.drag_offset" => self.plant_drag_offset = number(key, v)?,
            "plant.external_force" => self.plant_external_force = array(key, v)?,
            "weights.q" => self.weights_q = array(key, v)?,
            "weights.r" => self.weights_r = array(key, v)?,
            "weights.p_scale" => self.weights_p_scale = number(key, v)?,
            "weights.h_base" => self.weights_h_base = number(key, v)?,
            "bounds.u_min" => self.u_min = array(key, v)?,
            "bounds.u_max" => self.u_max = array(key, v)?,
            "planner.max_iterations" => self.planner_max_iterations = integer(key, v)? as usize,
            "mpc.horizon" => self.mpc_horizon = integer(key, v)? as usize,
            "mpc.dt" => self.mpc_dt = number(key, v)?,
            "mpc.q" => self.mpc_q = array(key, v)?,
            "mpc.r" => self.mpc_r = array(key, v)?,
            "mpc.p_scale" => self.mpc_p_scale = number(key, v)?,
            "mpc.max_sqp_iterations" => self.mpc_max_sqp_iterations = integer(key, v)? as usize,
            "observer.enabled" => {
                self.observer_enabled = v
                    .as_bool()
                    .ok_or_else(|| Error::Config(format!("{key} must be true or false")))?
            }
            "observer.gain" => self.observer_gain = number(key, v)?,
            "observer.max_force" => self.observer_max_force = number(key, v)?,
            other => {
                return Err(Error::Config(format!(
                    "unknown configuration key {other:?}"
                )))
            }
        }
        Ok(())
    }

    pub fn from_str_with(text: &str, overrides: &[(String, Value)]) -> Result<Self, Error> {
        let mut cfg = Self::default();
        for (k, v) in parse_flat(text)? {
            cfg.set(&k, &v)?;
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[(String, Value)]) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_str_with(&text, overrides)
    }

    pub fn intrinsics(&self) -> CameraIntrinsics {
        CameraIntrinsics {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            width: self.width,
            height: self.height,
        }
    }

    pub fn to_scenario(&self) -> Result<Scenario, Error> {
        let intr = self.intrinsics();
        let ext = CameraExtrinsics::forward_looking(
            Vector3::from(self.camera_translation),
            EulerAngles::new(
                self.camera_mount[0],
                self.camera_mount[1],
                self.camera_mount[2],
            ),
        );
        let vehicle = VehicleParams {
            mass: self.mass,
            gravity: Vector3::new(0.0, 0.0, -self.gravity),
            drag_coeff: self.drag_coeff,
            tau_roll: self.tau_roll,
            tau_pitch: self.tau_pitch,
            gain_roll: self.gain_roll,
            gain_pitch: self.gain_pitch,
            external_force: Vector3::zeros(),
        };
        let h: Matrix2<f64> = build_pixel_weight(&intr, self.weights_h_base);
        let weights =
            CostWeights::diagonal(self.weights_q, self.weights_r, h, self.weights_p_scale);
        let bounds = InputBounds {
            lower: ControlInput::from_vector(&InputVector::from(self.u_min)),
            upper: ControlInput::from_vector(&InputVector::from(self.u_max)),
        };
        let mpc_q = StateMatrix::from_diagonal(&StateVector::from(self.mpc_q));
        let mpc = MpcConfig {
            horizon: self.mpc_horizon,
            dt: self.mpc_dt,
            q: mpc_q,
            r: Matrix4::from_diagonal(&InputVector::from(self.mpc_r)),
            p: mpc_q * self.mpc_p_scale,
            bounds,
            max_sqp_iterations: self.mpc_max_sqp_iterations,
        };
        let scenario = Scenario {
            x_init: UavState::from_vector(&StateVector::from(self.init_state)),
            target_pose_world: Pose::new(
                Vector3::from(self.target_position),
                EulerAngles::yaw_only(self.target_yaw),
            ),
            goal_spec: GoalSpec {
                desired_offset: Vector3::from(self.goal_offset),
                desired_pixel: self
                    .goal_pixel
                    .map(Vector2::from)
                    .unwrap_or_else(|| intr.principal_point()),
            },
            tf: self.tf,
            steps: self.steps,
            vehicle,
            intr,
            ext,
            noise: DetectorNoise {
                sigma_pixel: self.sigma_pixel,
                sigma_position: self.sigma_position,
                sigma_yaw: self.sigma_yaw,
                seed: self.seed,
            },
            plant: PlantPerturbation {
                mass: self.plant_mass_offset,
                drag: self.plant_drag_offset,
                external_force: Vector3::from(self.plant_external_force),
            },
            seed: self.seed,
            weights,
            bounds,
            planner_max_iterations: self.planner_max_iterations,
            mpc,
            observer: ObserverConfig {
                enabled: self.observer_enabled,
                gain: self.observer_gain,
                max_force: self.observer_max_force,
            },
            settle_time: self.settle_time,
            inner_step: self.inner_step,
            tf_list: self.tf_list.clone(),
            trials: self.trials,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    /// Renders every key; parsing the result yields `self` again.
    pub fn to_config_string(&self) -> String {
        let f = |xs: &[f64]| {
            format!(
                "[{}]",
                xs.iter()
                    .map(|x| format!("{x:?}"))
                    .collect::<Vec<_>>()
                    .join(", ")
            )
        };
        let mut lines = vec![
            format!("scenario.seed = {}", self.seed),
            format!("scenario.tf = {:?}", self.tf),
            format!("scenario.steps = {}", self.steps),
            format!("scenario.trials = {}", self.trials),
            format!("scenario.tf_list = {}", f(&self.tf_list)),
            format!("scenario.settle_time = {:?}", self.settle_time),
            format!("scenario.inner_step = {:?}", self.inner_step),
            format!("init.state = {}", f(&self.init_state)),
            format!("target.position = {}", f(&self.target_position)),
            format!("target.yaw = {:?}", self.target_yaw),
            format!("goal.offset = {}", f(&self.goal_offset)),
        ];
        if let Some(p) = self.goal_pixel {
            lines.push(format!("goal.pixel = {}", f(&p)));
        }
        lines.extend([
            format!("vehicle.mass = {:?}", self.mass),
            format!("vehicle.gravity = {:?}", self.gravity),
            format!("vehicle.drag_coeff = {:?}", self.drag_coeff),
            format!("vehicle.tau_roll = {:?}", self.tau_roll),
            format!("vehicle.tau_pitch = {:?}", self.tau_pitch),
            format!("vehicle.gain_roll = {:?}", self.gain_roll),
            format!("vehicle.gain_pitch = {:?}", self.gain_pitch),
            format!("camera.fx = {:?}", self.fx),
            format!("camera.fy = {:?}", self.fy),
            format!("camera.cx = {:?}", self.cx),
            format!("camera.cy = {:?}", self.cy),
            format!("camera.width = {}", self.width),
            format!("camera.height = {}", self.height),
            format!("camera.translation = {}", f(&self.camera_translation)),
            format!("camera.mount = {}", f(&self.camera_mount)),
            format!("noise.sigma_pixel = {:?}", self.sigma_pixel),
            format!("noise.sigma_position = {:?}", self.sigma_position),
            format!("noise.sigma_yaw = {:?}", self.sigma_yaw),
            format!("plant.mass_offset = {:?}", self.plant_mass_offset),
            format!("plant.drag_offset = {:?}", self.plant_drag_offset),
            format!("plant.external_force = {}", f(&self.plant_external_force)),
            format!("weights.q = {}", f(&self.weights_q)),
            format!("weights.r = {}", f(&self.weights_r)),
            format!("weights.p_scale = {:?}", self.weights_p_scale),
            format!("weights.h_base = {:?}", self.weights_h_base),
            format!("bounds.u_min = {}", f(&self.u_min)),
            format!("bounds.u_max = {}", f(&self.u_max)),
            format!("planner.max_iterations = {}", self.planner_max_iterations),
            format!("mpc.horizon = {}", self.mpc_horizon),
            format!("mpc.dt = {:?}", self.mpc_dt),
            format!("mpc.q = {}", f(&self.mpc_q)),
            format!("mpc.r = {}", f(&self.mpc_r)),
            format!("mpc.p_scale = {:?}", self.mpc_p_scale),
            format!("mpc.max_sqp_iterations = {}", self.mpc_max_sqp_iterations),
            format!("observer.enabled = {}", self.observer_enabled),
            format!("observer.gain = {:?}", self.observer_gain),
            format!("observer.max_force = {:?}", self.observer_max_force),
        ]);
        let mut out = lines.join("\n");
        out.push('\n');
        out
    }
}

pub fn load_scenario(path: &Path, overrides: &[(String, Value)]) -> Result<Scenario, Error> {
    ScenarioConfig::load(path, overrides)?.to_scenario()
}
