//! The limb-only joint model.
//!
//! Twelve joints grouped in four limbs of three joints each, and eight
//! connections linking adjacent joints of the same limb. The declared order
//! of joints and connections is also the channel order of every 20-map
//! stack: joints occupy channels 0..12, connections channels 12..20.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const NUM_JOINTS: usize = 12;
pub const NUM_CONNECTIONS: usize = 8;
pub const NUM_MAPS: usize = NUM_JOINTS + NUM_CONNECTIONS;

pub const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "RS", "RE", "RW", "LS", "LE", "LW", "RH", "RK", "RA", "LH", "LK", "LA",
];

// Endpoint pairs by joint index, in channel order.
const CONNECTIONS: [(usize, usize); NUM_CONNECTIONS] = [
    (2, 1),   // RW-RE
    (1, 0),   // RE-RS
    (3, 4),   // LS-LE
    (4, 5),   // LE-LW
    (8, 7),   // RA-RK
    (7, 6),   // RK-RH
    (9, 10),  // LH-LK
    (10, 11), // LK-LA
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Limb {
    RightArm,
    LeftArm,
    RightLeg,
    LeftLeg,
}

impl Limb {
    pub const ALL: [Limb; 4] = [Limb::RightArm, Limb::LeftArm, Limb::RightLeg, Limb::LeftLeg];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Limb::RightArm => "right-arm",
            Limb::LeftArm => "left-arm",
            Limb::RightLeg => "right-leg",
            Limb::LeftLeg => "left-leg",
        }
    }

    /// Joint indices ordered distal, middle, proximal.
    pub fn joints(self) -> [usize; 3] {
        match self {
            Limb::RightArm => [2, 1, 0],
            Limb::LeftArm => [5, 4, 3],
            Limb::RightLeg => [8, 7, 6],
            Limb::LeftLeg => [11, 10, 9],
        }
    }

    /// Connection indices ordered distal first.
    pub fn connections(self) -> [usize; 2] {
        match self {
            Limb::RightArm => [0, 1],
            Limb::LeftArm => [3, 2],
            Limb::RightLeg => [4, 5],
            Limb::LeftLeg => [7, 6],
        }
    }
}

impl fmt::Display for Limb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Immutable joint/connection topology shared by every stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SkeletonModel;

impl SkeletonModel {
    pub fn new() -> Self {
        SkeletonModel
    }

    pub fn num_joints(&self) -> usize {
        NUM_JOINTS
    }

    pub fn num_connections(&self) -> usize {
        NUM_CONNECTIONS
    }

    pub fn joint_index(&self, name: &str) -> Result<usize> {
        JOINT_NAMES
            .iter()
            .position(|&n| n == name)
            .ok_or_else(|| Error::InvalidName(name.to_string()))
    }

    pub fn joint_name(&self, jid: usize) -> Result<&'static str> {
        check_joint(jid)?;
        Ok(JOINT_NAMES[jid])
    }

    pub fn connection_endpoints(&self, cid: usize) -> Result<(usize, usize)> {
        CONNECTIONS.get(cid).copied().ok_or(Error::OutOfRange {
            what: "connection index",
            value: cid,
            limit: NUM_CONNECTIONS,
        })
    }

    pub fn connection_name(&self, cid: usize) -> Result<String> {
        let (a, b) = self.connection_endpoints(cid)?;
        Ok(format!("{}-{}", JOINT_NAMES[a], JOINT_NAMES[b]))
    }

    pub fn limb_of(&self, jid: usize) -> Result<Limb> {
        check_joint(jid)?;
        // Joints are declared limb by limb in the order of `Limb::ALL`.
        Ok(Limb::ALL[jid / 3])
    }

    /// Channel of a joint map within a 20-map stack.
    pub fn joint_channel(&self, jid: usize) -> usize {
        jid
    }

    /// Channel of a connection map within a 20-map stack.
    pub fn connection_channel(&self, cid: usize) -> usize {
        NUM_JOINTS + cid
    }

    /// Channels (joints and connections) belonging to one limb.
    pub fn limb_channels(&self, limb: Limb) -> Vec<usize> {
        let mut channels: Vec<usize> = limb.joints().to_vec();
        channels.extend(limb.connections().iter().map(|&c| NUM_JOINTS + c));
        channels
    }

    pub fn description(&self) -> SkeletonDescription {
        SkeletonDescription {
            joints: JOINT_NAMES.iter().map(|s| s.to_string()).collect(),
            connections: CONNECTIONS
                .iter()
                .map(|&(a, b)| [JOINT_NAMES[a].to_string(), JOINT_NAMES[b].to_string()])
                .collect(),
            limbs: Limb::ALL
                .iter()
                .map(|&limb| LimbDescription {
                    name: limb.name().to_string(),
                    joints: limb.joints().iter().map(|&j| JOINT_NAMES[j].to_string()).collect(),
                    connections: limb.connections().to_vec(),
                })
                .collect(),
        }
    }
}

fn check_joint(jid: usize) -> Result<()> {
    if jid < NUM_JOINTS {
        Ok(())
    } else {
        Err(Error::OutOfRange {
            what: "joint index",
            value: jid,
            limit: NUM_JOINTS,
        })
    }
}

/// Self-describing topology embedded in checkpoints, reports and served
/// over HTTP.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkeletonDescription {
    pub joints: Vec<String>,
    pub connections: Vec<[String; 2]>,
    pub limbs: Vec<LimbDescription>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LimbDescription {
    pub name: String,
    pub joints: Vec<String>,
    pub connections: Vec<usize>,
}

impl SkeletonDescription {
    /// Whether this description matches the built-in model.
    pub fn is_compatible(&self) -> bool {
        *self == SkeletonModel.description()
    }
}
