//! The access predicate shared by every resource kind.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::auth::Principal;
use crate::error::{Error, Result};
use crate::ids::UserId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Visibility {
    Private,
    Shared,
    Public,
}

impl Visibility {
    pub fn as_str(self) -> &'static str {
        match self {
            Visibility::Private => "private",
            Visibility::Shared => "shared",
            Visibility::Public => "public",
        }
    }

    pub(crate) fn parse(s: &str) -> Visibility {
        match s {
            "shared" => Visibility::Shared,
            "public" => Visibility::Public,
            _ => Visibility::Private,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessPolicy {
    pub owner: UserId,
    pub visibility: Visibility,
    #[serde(default)]
    pub shared_with: BTreeSet<UserId>,
}

/// Requested replacement for a policy. The owner is not part of it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyUpdate {
    pub visibility: Visibility,
    #[serde(default)]
    pub shared_with: BTreeSet<UserId>,
}

impl AccessPolicy {
    pub fn private(owner: UserId) -> Self {
        AccessPolicy { owner, visibility: Visibility::Private, shared_with: BTreeSet::new() }
    }

    /// `p` may read: owner, any admin, anyone on public, members on shared.
    pub fn can_read(&self, p: &Principal) -> bool {
        p.user_id == self.owner
            || p.is_admin()
            || self.visibility == Visibility::Public
            || (self.visibility == Visibility::Shared && self.shared_with.contains(&p.user_id))
    }

    /// `p` may update metadata or replace the policy: owner or admin.
    pub fn can_manage(&self, p: &Principal) -> bool {
        p.user_id == self.owner || p.is_admin()
    }

    pub(crate) fn with_update(&self, update: PolicyUpdate) -> Result<AccessPolicy> {
        match (update.visibility, update.shared_with.is_empty()) {
            (Visibility::Shared, true) => Err(Error::InvalidPolicy("shared visibility needs at least one member")),
            (Visibility::Private | Visibility::Public, false) => {
                Err(Error::InvalidPolicy("shared_with is only valid with shared visibility"))
            }
            _ => Ok(AccessPolicy { owner: self.owner, visibility: update.visibility, shared_with: update.shared_with }),
        }
    }
}
