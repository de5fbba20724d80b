//! Access topology: access points, their neighbor relation, and the
//! transport functions that can carry a session from each access point.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::ModelError;

/// Access point (attachment location) identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AccessPointId(pub u32);

impl fmt::Display for AccessPointId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ap{}", self.0)
    }
}

/// Transport function node identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TfId(pub u32);

impl fmt::Display for TfId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "tf{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct AccessPoint {
    pub id: AccessPointId,
    /// Access points a terminal here can hand over to.
    #[serde(default)]
    pub neighbors: Vec<AccessPointId>,
    /// Transport functions that can serve as the (single-hop) path for a
    /// session anchored at this access point, in preference order.
    pub tf_nodes: Vec<TfId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct TfNode {
    pub id: TfId,
    /// Total QoS rate this TF can have admitted at once.
    pub capacity: f64,
}

/// Validated topology with indexed lookups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Topology {
    pub access_points: BTreeMap<AccessPointId, AccessPoint>,
    pub tf_nodes: BTreeMap<TfId, TfNode>,
}

/// Wire form: plain lists, as written in scenario files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct RawTopology {
    pub access_points: Vec<AccessPoint>,
    pub tf_nodes: Vec<TfNode>,
}

impl Topology {
    pub fn from_raw(raw: &RawTopology) -> Result<Topology, ModelError> {
        let mut tf_nodes = BTreeMap::new();
        for tf in &raw.tf_nodes {
            if tf.capacity <= 0.0 || !tf.capacity.is_finite() {
                return Err(ModelError::DisconnectedTopology(format!(
                    "{} has non-positive capacity",
                    tf.id
                )));
            }
            if tf_nodes.insert(tf.id, tf.clone()).is_some() {
                return Err(ModelError::DisconnectedTopology(format!(
                    "duplicate tf node {}",
                    tf.id
                )));
            }
        }
        let mut access_points = BTreeMap::new();
        for ap in &raw.access_points {
            if access_points.insert(ap.id, ap.clone()).is_some() {
                return Err(ModelError::DisconnectedTopology(format!(
                    "duplicate access point {}",
                    ap.id
                )));
            }
        }
        if access_points.is_empty() {
            return Err(ModelError::DisconnectedTopology(
                "no access points".to_string(),
            ));
        }
        let topo = Topology {
            access_points,
            tf_nodes,
        };
        topo.check()?;
        Ok(topo)
    }

    /// Every access point reaches at least one known TF, and the neighbor
    /// relation is symmetric over known access points.
    fn check(&self) -> Result<(), ModelError> {
        for ap in self.access_points.values() {
            if ap.tf_nodes.is_empty() {
                return Err(ModelError::DisconnectedTopology(format!(
                    "{} reaches no transport function",
                    ap.id
                )));
            }
            for tf in &ap.tf_nodes {
                if !self.tf_nodes.contains_key(tf) {
                    return Err(ModelError::DisconnectedTopology(format!(
                        "{} references unknown {}",
                        ap.id, tf
                    )));
                }
            }
            for nb in &ap.neighbors {
                if *nb == ap.id {
                    return Err(ModelError::DisconnectedTopology(format!(
                        "{} lists itself as a neighbor",
                        ap.id
                    )));
                }
                let Some(other) = self.access_points.get(nb) else {
                    return Err(ModelError::DisconnectedTopology(format!(
                        "{} references unknown neighbor {}",
                        ap.id, nb
                    )));
                };
                if !other.neighbors.contains(&ap.id) {
                    return Err(ModelError::DisconnectedTopology(format!(
                        "neighbor relation not symmetric between {} and {}",
                        ap.id, nb
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn access_point(&self, id: AccessPointId) -> Option<&AccessPoint> {
        self.access_points.get(&id)
    }

    /// Candidate single-TF paths for a session anchored at `ap`, in the
    /// access point's preference order.
    pub fn candidate_paths(&self, ap: AccessPointId) -> &[TfId] {
        self.access_points
            .get(&ap)
            .map(|a| a.tf_nodes.as_slice())
            .unwrap_or(&[])
    }

    /// Default serving TF for an access point (first preference).
    pub fn serving_tf(&self, ap: AccessPointId) -> Option<TfId> {
        self.candidate_paths(ap).first().copied()
    }

    pub fn capacity(&self, tf: TfId) -> f64 {
        self.tf_nodes.get(&tf).map(|n| n.capacity).unwrap_or(0.0)
    }
}
