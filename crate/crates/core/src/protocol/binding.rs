//! Mobility location binding table kept by the MSSF: permanent identity
//! to current temporary address and attachment point, with a per-entry
//! epoch that increases by exactly one on every rebind.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::{AccessPointId, Ip, UserId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BindingEntry {
    pub user: UserId,
    pub permanent_ip: Ip,
    pub temporary_ip: Ip,
    pub attachment_point: AccessPointId,
    pub epoch: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BindingTable {
    entries: BTreeMap<Ip, BindingEntry>,
}

impl BindingTable {
    pub fn new() -> BindingTable {
        BindingTable::default()
    }

    /// First binding for a permanent identity; epoch starts at 1.
    /// Registering an already-bound identity is a caller bug.
    pub fn register(
        &mut self,
        user: UserId,
        permanent_ip: Ip,
        temporary_ip: Ip,
        attachment_point: AccessPointId,
    ) -> &BindingEntry {
        let entry = BindingEntry {
            user,
            permanent_ip,
            temporary_ip,
            attachment_point,
            epoch: 1,
        };
        assert!(
            self.entries.insert(permanent_ip, entry).is_none(),
            "binding for {permanent_ip} registered twice"
        );
        &self.entries[&permanent_ip]
    }

    /// Rebind an existing entry to a new location; epoch increments by 1.
    pub fn update(
        &mut self,
        permanent_ip: Ip,
        temporary_ip: Ip,
        attachment_point: AccessPointId,
    ) -> Option<&BindingEntry> {
        let entry = self.entries.get_mut(&permanent_ip)?;
        entry.temporary_ip = temporary_ip;
        entry.attachment_point = attachment_point;
        entry.epoch += 1;
        Some(&*entry)
    }

    pub fn lookup(&self, permanent_ip: Ip) -> Option<&BindingEntry> {
        self.entries.get(&permanent_ip)
    }

    pub fn lookup_user(&self, user: UserId) -> Option<&BindingEntry> {
        self.entries.values().find(|e| e.user == user)
    }

    pub fn entries(&self) -> impl Iterator<Item = &BindingEntry> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epochs_increase_by_one() {
        let mut table = BindingTable::new();
        let perm = Ip(1000);
        let e = table.register(UserId(0), perm, Ip(2000), AccessPointId(0));
        assert_eq!(e.epoch, 1);
        let e = table.update(perm, Ip(2000), AccessPointId(1)).unwrap();
        assert_eq!(e.epoch, 2);
        let e = table.update(perm, Ip(2000), AccessPointId(0)).unwrap();
        assert_eq!(e.epoch, 3);
    }

    #[test]
    fn update_unknown_identity_is_none() {
        let mut table = BindingTable::new();
        assert!(table.update(Ip(1), Ip(2), AccessPointId(0)).is_none());
    }
}
