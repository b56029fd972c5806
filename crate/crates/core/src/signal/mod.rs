//! Signal ingestion and preprocessing.

mod dataset;
pub mod edf;
pub mod labels;
pub mod preprocess;
mod record;
pub mod resample;
pub mod stages;

pub use dataset::{
    load_cache, prepare_record, prepare_unlabeled, preprocess, preprocess_unlabeled, read_cache_index, read_cache_record, read_manifest, write_cache_index,
    write_cache_record, write_manifest, CacheEntry, ManifestEntry, PrepareOptions, RawChannel, RecordReport,
    CACHE_INDEX, MANIFEST_HEADER,
};
pub use record::PsgRecord;
pub use stages::{map_stages, Stage, StageMap, CLASS_NAMES};
