//! Evidence-highlighting machinery for query-focused table-to-text
//! generation: table model and transforms, prompt rendering, n-gram
//! metrics, generator backends, and evidence-label construction.

pub mod cli;
pub mod evidence;
pub mod feedback;
pub mod metrics;
pub mod prompting;
pub mod table;
pub mod transforms;
