//! The per-tick monitored record and its wire encoding.
//!
//! Field names are the log contract; every variable a fault can reach is in
//! here, recorded post-injection (and pre-clamp for actuation values). Bit
//! flips can produce non-finite reals in list variables, so real fields are
//! encoded through a helper that survives NaN and infinities in JSON.

use serde::{Deserialize, Serialize};

use crate::pipeline::{LaneType, ObjectClass};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitoredRecord {
    pub frame_id: i64,
    pub num_detected_objects: i64,
    pub object_class: Vec<ObjectClass>,
    #[serde(with = "real_pairs")]
    pub object_coordinates: Vec<(f64, f64)>,
    #[serde(with = "real_pairs")]
    pub bounding_box: Vec<(f64, f64)>,
    pub lane_type: LaneType,
    #[serde(with = "real")]
    pub lane_c0: f64,
    #[serde(with = "real")]
    pub lane_c1: f64,
    #[serde(with = "real")]
    pub lane_c2: f64,
    #[serde(with = "real")]
    pub est_s: f64,
    #[serde(with = "real")]
    pub est_lateral: f64,
    #[serde(with = "real")]
    pub est_heading: f64,
    #[serde(with = "real")]
    pub est_speed: f64,
    #[serde(with = "real")]
    pub target_speed: f64,
    #[serde(with = "real")]
    pub lead_gap: f64,
    #[serde(with = "real")]
    pub pid_measured_value: f64,
    #[serde(with = "real")]
    pub pid_target_value: f64,
    #[serde(with = "real")]
    pub pid_output: f64,
    #[serde(with = "real")]
    pub throttle: f64,
    #[serde(with = "real")]
    pub brake: f64,
    #[serde(with = "real")]
    pub steering: f64,
    #[serde(with = "real")]
    pub ego_speed: f64,
    #[serde(with = "real")]
    pub ego_lateral: f64,
    #[serde(with = "real")]
    pub ego_s: f64,
}

/// f64 as a JSON number, with non-finite values spelled as tagged strings.
pub mod real {
    use serde::de::{self, Visitor};
    use serde::{Deserializer, Serializer};
    use std::fmt;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("NaN")
        } else if *v > 0.0 {
            s.serialize_str("Infinity")
        } else {
            s.serialize_str("-Infinity")
        }
    }

    struct RealVisitor;

    impl Visitor<'_> for RealVisitor {
        type Value = f64;

        fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
            f.write_str("a number or NaN/Infinity/-Infinity")
        }

        fn visit_f64<E: de::Error>(self, v: f64) -> Result<f64, E> {
            Ok(v)
        }

        fn visit_i64<E: de::Error>(self, v: i64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_u64<E: de::Error>(self, v: u64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_str<E: de::Error>(self, v: &str) -> Result<f64, E> {
            match v {
                "NaN" => Ok(f64::NAN),
                "Infinity" => Ok(f64::INFINITY),
                "-Infinity" => Ok(f64::NEG_INFINITY),
                other => Err(E::custom(format!("unrecognized real tag {other:?}"))),
            }
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        d.deserialize_any(RealVisitor)
    }
}

/// Vec<(f64, f64)> with the same non-finite tolerance as [`real`].
pub mod real_pairs {
    use serde::ser::SerializeSeq;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Pair(#[serde(with = "super::real")] f64, #[serde(with = "super::real")] f64);

    pub fn serialize<S: Serializer>(v: &[(f64, f64)], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(v.len()))?;
        for &(a, b) in v {
            seq.serialize_element(&Pair(a, b))?;
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<(f64, f64)>, D::Error> {
        let pairs = Vec::<Pair>::deserialize(d)?;
        Ok(pairs.into_iter().map(|Pair(a, b)| (a, b)).collect())
    }
}

/// One monitored value, as seen by the envelope builder and the classifier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Monitored<'a> {
    Num(f64),
    Cat(&'a str),
}

impl MonitoredRecord {
    /// Visit every monitored value in wire-contract order. List variables are
    /// visited per flattened element. Both the golden envelope and the
    /// classifier walk records through this single path, so they can never
    /// disagree about variable naming or ordering.
    pub fn visit_monitored<'a>(&'a self, mut f: impl FnMut(&'static str, Option<usize>, Monitored<'a>)) {
        f("frame_id", None, Monitored::Num(self.frame_id as f64));
        f(
            "num_detected_objects",
            None,
            Monitored::Num(self.num_detected_objects as f64),
        );
        for (i, class) in self.object_class.iter().enumerate() {
            f("object_class", Some(i), Monitored::Cat(class.as_str()));
        }
        for (i, &(a, b)) in self.object_coordinates.iter().enumerate() {
            f("object_coordinates", Some(2 * i), Monitored::Num(a));
            f("object_coordinates", Some(2 * i + 1), Monitored::Num(b));
        }
        for (i, &(a, b)) in self.bounding_box.iter().enumerate() {
            f("bounding_box", Some(2 * i), Monitored::Num(a));
            f("bounding_box", Some(2 * i + 1), Monitored::Num(b));
        }
        f("lane_type", None, Monitored::Cat(self.lane_type.as_str()));
        f("lane_c0", None, Monitored::Num(self.lane_c0));
        f("lane_c1", None, Monitored::Num(self.lane_c1));
        f("lane_c2", None, Monitored::Num(self.lane_c2));
        f("est_s", None, Monitored::Num(self.est_s));
        f("est_lateral", None, Monitored::Num(self.est_lateral));
        f("est_heading", None, Monitored::Num(self.est_heading));
        f("est_speed", None, Monitored::Num(self.est_speed));
        f("target_speed", None, Monitored::Num(self.target_speed));
        f("lead_gap", None, Monitored::Num(self.lead_gap));
        f("pid_measured_value", None, Monitored::Num(self.pid_measured_value));
        f("pid_target_value", None, Monitored::Num(self.pid_target_value));
        f("pid_output", None, Monitored::Num(self.pid_output));
        f("throttle", None, Monitored::Num(self.throttle));
        f("brake", None, Monitored::Num(self.brake));
        f("steering", None, Monitored::Num(self.steering));
        f("ego_speed", None, Monitored::Num(self.ego_speed));
        f("ego_lateral", None, Monitored::Num(self.ego_lateral));
        f("ego_s", None, Monitored::Num(self.ego_s));
    }
}

/// The variables whose deviation marks an actuation error.
pub const ACTUATION_VARIABLES: [&str; 4] = ["throttle", "brake", "steering", "pid_output"];
