//! Segment indexing and the three-stage search cascade.

mod index;
mod kmeans;
mod search;
mod segment;
mod store;
pub mod text;

pub use index::{build_index, smoothed_idf, tfidf_vector, IndexConfig, PostingList, ProductQuantizer, TfIdfIndex};
pub use search::{search, SearchConfig, SearchHit, SearchResult, StageTimings};
pub use segment::segment_track;
pub use store::{load_index, save_index, IndexManifest};
pub use text::{edit_distance, edit_similarity, jaccard};

use serde::{Deserialize, Serialize};

use crate::quantizer::TokenSequence;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub track_id: String,
    /// Seconds from the start of the track.
    pub start: f64,
    /// Segment length in seconds.
    pub length: f64,
    pub tokens: TokenSequence,
}

/// Segment records plus their token sets, addressed by segment id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SegmentStore {
    pub records: Vec<SegmentRecord>,
    sets: Vec<Vec<u32>>,
}

impl SegmentStore {
    pub fn new(records: Vec<SegmentRecord>) -> Self {
        let sets = records.iter().map(|r| text::token_set(&r.tokens.tokens)).collect();
        SegmentStore { records, sets }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: u32) -> Option<&SegmentRecord> {
        self.records.get(id as usize)
    }

    pub fn token_set(&self, id: u32) -> &[u32] {
        &self.sets[id as usize]
    }
}
