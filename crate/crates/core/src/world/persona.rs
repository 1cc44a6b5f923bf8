use serde::{Deserialize, Serialize};

use crate::corpus::VideoId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    User,
    Obfuscation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonaEntry {
    pub video_id: VideoId,
    pub source: Source,
}

/// Ordered watch history with a source tag per entry.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Persona {
    pub entries: Vec<PersonaEntry>,
}

impl Persona {
    pub fn from_user(ids: &[VideoId]) -> Self {
        Self {
            entries: ids
                .iter()
                .map(|&video_id| PersonaEntry {
                    video_id,
                    source: Source::User,
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, video_id: VideoId, source: Source) {
        self.entries.push(PersonaEntry { video_id, source });
    }

    /// All video ids in play order, tags stripped.
    pub fn video_ids(&self) -> Vec<VideoId> {
        self.entries.iter().map(|e| e.video_id).collect()
    }

    /// Entries tagged `User`, in order.
    pub fn user_videos(&self) -> Vec<VideoId> {
        self.entries
            .iter()
            .filter(|e| e.source == Source::User)
            .map(|e| e.video_id)
            .collect()
    }

    pub fn obfuscation_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.source == Source::Obfuscation)
            .count()
    }

    pub fn user_count(&self) -> usize {
        self.len() - self.obfuscation_count()
    }

    /// Per-entry labels, `true` for obfuscation videos.
    pub fn labels(&self) -> Vec<bool> {
        self.entries
            .iter()
            .map(|e| e.source == Source::Obfuscation)
            .collect()
    }

    /// Whether dropping the obfuscation entries recovers `user` exactly.
    pub fn preserves_user(&self, user: &[VideoId]) -> bool {
        self.entries
            .iter()
            .filter(|e| e.source == Source::User)
            .map(|e| e.video_id)
            .eq(user.iter().copied())
    }
}
