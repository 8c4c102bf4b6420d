//! Toolkit for measuring how resilient Tor-hosting autonomous systems are to
//! equally-specific BGP hijack and interception attacks, for resilience-aware
//! guard relay selection, and for detecting routing anomalies that affect Tor
//! relay prefixes.
//!
//! The crate is organized around the data flow:
//!
//! * [`topology`] loads the AS-relationship graph (CAIDA `asn|asn|rel` format).
//! * [`pathinfer`] runs preference-ordered valley-free exploration from a
//!   source AS, producing per-destination preference ranks and equal-best
//!   path counts.
//! * [`resilience`] turns path state into hijack/interception resilience
//!   values, aggregates them, and exports CDF series.
//! * [`relaydata`] ingests Tor consensus/relay data, IP-to-ASN mappings, and
//!   client AS sets.
//! * [`guardselect`] implements the resilience-aware guard selection
//!   (Tillé-adjusted inclusion probabilities, alpha-blended weights) and its
//!   anonymity metrics.
//! * [`monitor`] replays BGP update streams, flags origin conflicts and
//!   frequency/time anomalies on monitored prefixes, and manages a blacklist.
//! * [`oracle`] holds a brute-force path enumerator used to cross-check the
//!   exploration engine.

pub mod guardselect;
pub mod monitor;
pub mod net;
pub mod oracle;
pub mod pathinfer;
pub mod relaydata;
pub mod resilience;
pub mod topology;

/// Autonomous system number.
pub type Asn = u32;
