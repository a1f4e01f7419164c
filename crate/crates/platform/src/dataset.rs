//! Stored runs to a slit-augmented training dataset.

use sdai_core::slit::{augment_episode, StackLayout};
use sdai_core::{Episode, SlitConfig};
use sdai_nn::Dataset;

use crate::storage::Storage;
use crate::{PlatformError, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetFilter {
    /// only runs with this scenario tag
    pub scenario_tag: Option<String>,
}

/// Augments every matching run, in ascending episode-id order, and
/// concatenates the results. Within a run, entries are ordered by sample
/// index and then offset index, so the output depends only on the stored
/// runs, the configs and `seed`.
pub fn build_dataset(storage: &Storage, filter: &DatasetFilter, slit: &SlitConfig, layout: &StackLayout, seed: u64) -> Result<Dataset> {
    let mut runs = storage.list_runs(filter.scenario_tag.as_deref());
    if runs.is_empty() {
        return Err(PlatformError::NotFound(match &filter.scenario_tag {
            Some(t) => format!("no runs tagged {t:?}"),
            None => "no runs".into(),
        }));
    }
    runs.sort_by(|a, b| (a.episode_id, a.digest).cmp(&(b.episode_id, b.digest)));
    let episodes = runs.iter().map(|m| Ok(Episode::decode(&storage.read_run(m)?)?));
    augment_episodes(episodes, slit, layout, seed)
}

/// Augments episodes in the given order and concatenates the results; each
/// episode is decoded lazily and dropped once its entries are added.
pub fn augment_episodes(
    episodes: impl IntoIterator<Item = Result<Episode>>,
    slit: &SlitConfig,
    layout: &StackLayout,
    seed: u64,
) -> Result<Dataset> {
    let mut ds: Option<Dataset> = None;
    for ep in episodes {
        let ep = ep?;
        let aug = augment_episode(&ep, &ep.camera, slit, layout, seed)?;
        let d = ds.get_or_insert_with(|| {
            Dataset::new(layout.n_frames, ep.height(), ep.width(), slit.crop_width, ep.m_steps as usize, layout.depth_grid)
        });
        d.push_augmented(&aug)?;
    }
    ds.ok_or_else(|| PlatformError::NotFound("no episodes".into()))
}
