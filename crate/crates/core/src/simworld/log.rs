use std::io::{BufRead, Write};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::geometry::{Pose4, Pose6, Rot3};
use crate::measurements::DetectionObservation;
use crate::DroneId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VioPayload {
    pub pose4: Pose4,
    pub pose6: Pose6,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UwbPayload {
    pub d: f64,
    pub sigma: f64,
    /// Injected outlier label; never read by the estimator.
    pub outlier: bool,
}

/// Detection as logged. The second id of the record is the true target;
/// `label` is what the detector reported.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionPayload {
    pub label: Option<DroneId>,
    pub dir: Vector3<f64>,
    pub inv_depth: f64,
    pub cam_rot: Rot3,
    pub cam_pos: Vector3<f64>,
    pub sigma_dir: f64,
    pub sigma_inv_depth: f64,
}

impl DetectionPayload {
    pub fn from_observation(obs: &DetectionObservation) -> Self {
        DetectionPayload {
            label: obs.label,
            dir: obs.dir,
            inv_depth: obs.inv_depth,
            cam_rot: obs.cam_rot,
            cam_pos: obs.cam_pos,
            sigma_dir: obs.sigma_dir,
            sigma_inv_depth: obs.sigma_inv_depth,
        }
    }

    pub fn to_observation(&self, observer: DroneId, t: f64) -> DetectionObservation {
        DetectionObservation {
            observer,
            t,
            label: self.label,
            dir: self.dir,
            inv_depth: self.inv_depth,
            cam_rot: self.cam_rot,
            cam_pos: self.cam_pos,
            sigma_dir: self.sigma_dir,
            sigma_inv_depth: self.sigma_inv_depth,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyframePayload {
    pub vio4: Pose4,
    pub vio6: Pose6,
    pub descriptors: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroneInfo {
    pub id: DroneId,
    pub start: f64,
    pub stop: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub name: String,
    pub seed: u64,
    pub duration: f64,
    pub master_hz: f64,
    pub n_ticks: u64,
    pub drones: Vec<DroneInfo>,
}

/// One line of the measurement log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogRecord {
    Gt { t: f64, ids: [DroneId; 1], payload: Pose6 },
    Vio { t: f64, ids: [DroneId; 1], payload: VioPayload },
    Uwb { t: f64, ids: [DroneId; 2], payload: UwbPayload },
    Detection { t: f64, ids: [DroneId; 2], payload: DetectionPayload },
    Keyframe { t: f64, ids: [DroneId; 1], payload: KeyframePayload },
}

impl LogRecord {
    pub fn t(&self) -> f64 {
        match self {
            LogRecord::Gt { t, .. }
            | LogRecord::Vio { t, .. }
            | LogRecord::Uwb { t, .. }
            | LogRecord::Detection { t, .. }
            | LogRecord::Keyframe { t, .. } => *t,
        }
    }
}

/// Header plus time-ordered records. Serialized as JSON lines, header first.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementLog {
    pub header: LogHeader,
    pub records: Vec<LogRecord>,
}

impl MeasurementLog {
    pub fn write_jsonl(&self, w: &mut impl Write) -> Result<(), SimError> {
        let line = |e: serde_json::Error| SimError::Log { line: 0, source: e };
        serde_json::to_writer(&mut *w, &self.header).map_err(line)?;
        writeln!(w)?;
        for r in &self.records {
            serde_json::to_writer(&mut *w, r).map_err(line)?;
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn read_jsonl(r: impl BufRead) -> Result<MeasurementLog, SimError> {
        let mut lines = r.lines().enumerate();
        let header = match lines.next() {
            Some((_, l)) => serde_json::from_str(&l?).map_err(|e| SimError::Log { line: 1, source: e })?,
            None => return Err(SimError::InvalidScenario("empty log".into())),
        };
        let mut records = Vec::new();
        for (n, l) in lines {
            let l = l?;
            if l.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(&l).map_err(|e| SimError::Log { line: n + 1, source: e })?);
        }
        Ok(MeasurementLog { header, records })
    }

    pub fn to_jsonl_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }
}
