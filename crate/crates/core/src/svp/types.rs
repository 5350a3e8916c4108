use std::fmt;

use thiserror::Error;

use crate::value::ChannelValue;

/// Where a place physically lives.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum NodeAddr {
    /// The node executing the create.
    Local,
    /// A remote node, addressed by its `host:port` endpoint.
    Remote(String),
}

/// An abstract resource a family is bound to.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Place {
    pub node: NodeAddr,
    /// Resource tag within the node. Exclusive places with the same tag on
    /// the same node share one queue.
    pub resource: String,
    /// At most one family executes on an exclusive place at any instant.
    pub exclusive: bool,
}

impl Place {
    pub const DEFAULT_RESOURCE: &'static str = "default";

    /// The default place of the local node.
    pub fn local() -> Place {
        Place {
            node: NodeAddr::Local,
            resource: Place::DEFAULT_RESOURCE.to_owned(),
            exclusive: false,
        }
    }

    pub fn local_exclusive(resource: &str) -> Place {
        Place {
            node: NodeAddr::Local,
            resource: resource.to_owned(),
            exclusive: true,
        }
    }

    pub fn remote(endpoint: &str, resource: &str, exclusive: bool) -> Place {
        Place {
            node: NodeAddr::Remote(endpoint.to_owned()),
            resource: resource.to_owned(),
            exclusive,
        }
    }

    pub fn is_local(&self) -> bool {
        self.node == NodeAddr::Local
    }
}

impl Default for Place {
    fn default() -> Self {
        Place::local()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RangeError {
    #[error("step must be nonzero")]
    ZeroStep,
    #[error("range yields {0} threads, more than a family can index")]
    TooLarge(i128),
}

/// Index range of a family: `start, start+step, …` while short of `limit`.
///
/// The limit is exclusive, so `RangeSpec::new(2, 8)` yields indices `2..=7`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RangeSpec {
    pub start: i64,
    pub limit: i64,
    pub step: i64,
    /// Maximum number of threads of the family running at once; 0 selects
    /// the runtime default. Never changes results.
    pub block: u64,
}

impl RangeSpec {
    pub fn new(start: i64, limit: i64) -> RangeSpec {
        RangeSpec {
            start,
            limit,
            step: 1,
            block: 0,
        }
    }

    pub fn with_step(self, step: i64) -> RangeSpec {
        RangeSpec { step, ..self }
    }

    pub fn with_block(self, block: u64) -> RangeSpec {
        RangeSpec { block, ..self }
    }

    /// `max(0, ceil((limit - start) / step))`.
    pub fn thread_count(&self) -> Result<u64, RangeError> {
        if self.step == 0 {
            return Err(RangeError::ZeroStep);
        }
        let span = i128::from(self.limit) - i128::from(self.start);
        let step = i128::from(self.step);
        let count = if (span > 0) == (step > 0) && span != 0 {
            let (span, step) = (span.abs(), step.abs());
            (span + step - 1) / step
        } else {
            0
        };
        u64::try_from(count).map_err(|_| RangeError::TooLarge(count))
    }

    /// Index of the thread at sequence position `pos`.
    pub fn index_at(&self, pos: u64) -> i64 {
        self.start + (pos as i64).wrapping_mul(self.step)
    }
}

/// Identity of a family, unique across a system run.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FamilyId {
    /// Node id of the node that issued the create.
    pub origin: String,
    pub serial: u64,
}

impl fmt::Display for FamilyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.origin, self.serial)
    }
}

/// Everything a create needs.
#[derive(Debug, Clone)]
pub struct FamilyDescriptor {
    pub place: Place,
    pub range: RangeSpec,
    /// Name of a registered thread function.
    pub function: String,
    /// Initial shared-channel values, read by the first thread.
    pub shareds: Vec<ChannelValue>,
    /// Global-channel values, read by every thread.
    pub globals: Vec<ChannelValue>,
}

impl FamilyDescriptor {
    pub fn new(function: &str, range: RangeSpec) -> FamilyDescriptor {
        FamilyDescriptor {
            place: Place::local(),
            range,
            function: function.to_owned(),
            shareds: Vec::new(),
            globals: Vec::new(),
        }
    }

    pub fn on(mut self, place: Place) -> FamilyDescriptor {
        self.place = place;
        self
    }

    pub fn shared(mut self, v: impl Into<ChannelValue>) -> FamilyDescriptor {
        self.shareds.push(v.into());
        self
    }

    pub fn global(mut self, v: impl Into<ChannelValue>) -> FamilyDescriptor {
        self.globals.push(v.into());
        self
    }
}
