//! A distributed fork-join runtime.
//!
//! Programs are families of indexed threads started by a create and
//! awaited by a sync. Threads communicate only through write-once channels:
//! shared channels pass a value from each thread to its successor, global
//! channels broadcast one value to every thread. A create names a place,
//! and a place may live on another node, in which case the family runs
//! there and the memory its data description names is copied in at create
//! and back at sync.
//!
//! ```
//! use dsvp::programs::{fibonacci, fibonacci_buffer, fibonacci_family};
//! use dsvp::svp::{Place, Runtime};
//!
//! let rt = Runtime::new("doc");
//! rt.register(fibonacci()).unwrap();
//! let result = fibonacci_buffer(8);
//! let mut family = rt.create(fibonacci_family(Place::local(), &result)).unwrap();
//! assert!(family.sync().unwrap().status.is_completed());
//! assert_eq!(result.to_i64s(), [0, 1, 1, 2, 3, 5, 8, 13]);
//! ```

pub mod bench;
pub mod datadesc;
pub mod fault;
pub mod node;
pub mod programs;
pub mod svp;
pub mod value;
pub mod wire;

/// Chapters of the guide in `book/`, compiled and run as doctests.
#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/families.md")]
    mod families {}
    #[doc = include_str!("../../../book/src/channels.md")]
    mod channels {}
    #[doc = include_str!("../../../book/src/places.md")]
    mod places {}
    #[doc = include_str!("../../../book/src/sequential.md")]
    mod sequential {}
    #[doc = include_str!("../../../book/src/data-descriptions.md")]
    mod data_descriptions {}
    #[doc = include_str!("../../../book/src/wire-format.md")]
    mod wire_format {}
    #[doc = include_str!("../../../book/src/nodes.md")]
    mod nodes {}
    #[doc = include_str!("../../../book/src/fault-tolerance.md")]
    mod fault_tolerance {}
    #[doc = include_str!("../../../book/src/benchmarking.md")]
    mod benchmarking {}
}
