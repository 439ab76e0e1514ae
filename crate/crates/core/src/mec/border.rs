//! Border-cell mirroring between overlapping MEC servers.

use std::collections::{BTreeMap, BTreeSet};

use super::descriptor::MecDescriptor;
use crate::{CellId, HexGrid};

/// Cells whose centers lie inside both operating discs.
pub fn border_cells(this: &MecDescriptor, n: &MecDescriptor, grid: &HexGrid) -> BTreeSet<CellId> {
    if !this.overlaps(n) {
        return BTreeSet::new();
    }
    let mine = grid.cells_in_disc(this.position, this.r_operating_m);
    let theirs = grid.cells_in_disc(n.position, n.r_operating_m);
    mine.intersection(&theirs).copied().collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum BorderAction {
    /// Open a client session to the neighbor's broker.
    Connect(MecDescriptor),
    Subscribe { neighbor: String, cell: CellId },
    Unsubscribe { neighbor: String, cell: CellId },
    /// No border cells remain; close the session.
    Disconnect { neighbor: String },
}

/// Tracks which neighbor feed cells are currently subscribed.
#[derive(Debug, Clone, Default)]
pub struct BorderSubscriptions {
    current: BTreeMap<String, (MecDescriptor, BTreeSet<CellId>)>,
}

impl BorderSubscriptions {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn cells(&self, neighbor: &str) -> Option<&BTreeSet<CellId>> {
        self.current.get(neighbor).map(|(_, c)| c)
    }

    pub fn total_cells(&self) -> usize {
        self.current.values().map(|(_, c)| c.len()).sum()
    }

    pub fn neighbors(&self) -> impl Iterator<Item = &str> {
        self.current.keys().map(String::as_str)
    }

    /// Brings the subscription set in line with `this.neighbors` and returns
    /// the actions needed to get there. An endpoint change is treated as a
    /// disconnect followed by a fresh connect.
    pub fn reconcile(&mut self, this: &MecDescriptor, grid: &HexGrid) -> Vec<BorderAction> {
        let mut desired: BTreeMap<String, (MecDescriptor, BTreeSet<CellId>)> = BTreeMap::new();
        for n in &this.neighbors {
            if n.mec_id == this.mec_id {
                continue;
            }
            let cells = border_cells(this, n, grid);
            if !cells.is_empty() {
                desired.insert(n.mec_id.clone(), (n.shallow(), cells));
            }
        }

        let mut actions = Vec::new();
        let old = std::mem::take(&mut self.current);
        for (id, (old_desc, _)) in &old {
            match desired.get(id) {
                Some((d, _)) if d.broker_endpoint == old_desc.broker_endpoint => {}
                _ => actions.push(BorderAction::Disconnect { neighbor: id.clone() }),
            }
        }
        for (id, (desc, cells)) in &desired {
            let kept = old
                .get(id)
                .filter(|(d, _)| d.broker_endpoint == desc.broker_endpoint)
                .map(|(_, c)| c);
            match kept {
                Some(prev) => {
                    for cell in prev.difference(cells) {
                        actions.push(BorderAction::Unsubscribe { neighbor: id.clone(), cell: *cell });
                    }
                    for cell in cells.difference(prev) {
                        actions.push(BorderAction::Subscribe { neighbor: id.clone(), cell: *cell });
                    }
                }
                None => {
                    actions.push(BorderAction::Connect(desc.clone()));
                    actions.extend(
                        cells
                            .iter()
                            .map(|c| BorderAction::Subscribe { neighbor: id.clone(), cell: *c }),
                    );
                }
            }
        }
        self.current = desired;
        actions
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{haversine_m, EARTH_RADIUS_M};
    use crate::GeoPoint;

    fn east(m: f64) -> GeoPoint {
        GeoPoint::new(0.0, (m / EARTH_RADIUS_M).to_degrees()).unwrap()
    }

    fn mec(id: &str, x: f64, endpoint: &str) -> MecDescriptor {
        MecDescriptor::new(id, east(x), 500.0, 800.0, endpoint).unwrap()
    }

    fn grid() -> HexGrid {
        HexGrid::with_default_area(east(0.0)).unwrap()
    }

    #[test]
    fn disjoint_discs() {
        assert!(border_cells(&mec("A", 0.0, "a:1"), &mec("B", 1700.0, "b:1"), &grid()).is_empty());
    }

    #[test]
    fn overlapping_discs() {
        let (a, b, g) = (mec("A", 0.0, "a:1"), mec("B", 1000.0, "b:1"), grid());
        let cells = border_cells(&a, &b, &g);
        assert!(!cells.is_empty());
        for c in &cells {
            let center = g.cell_center(*c).unwrap();
            assert!(haversine_m(center, a.position) <= 800.0);
            assert!(haversine_m(center, b.position) <= 800.0);
        }
        assert_eq!(cells, border_cells(&b, &a, &g));
    }

    #[test]
    fn reconcile_diff() {
        let g = grid();
        let mut a = mec("A", 0.0, "a:1");
        let mut subs = BorderSubscriptions::new();
        assert!(subs.reconcile(&a, &g).is_empty());

        a.neighbors.push(mec("B", 1000.0, "b:1"));
        let acts = subs.reconcile(&a, &g);
        assert!(matches!(&acts[0], BorderAction::Connect(d) if d.mec_id == "B"));
        let n = subs.cells("B").unwrap().len();
        assert_eq!(acts.len(), 1 + n);

        // unchanged neighbor set: nothing to do
        assert!(subs.reconcile(&a, &g).is_empty());

        // neighbor moves away: only unsubscribes
        a.neighbors[0] = mec("B", 1300.0, "b:1");
        let acts = subs.reconcile(&a, &g);
        assert!(!acts.is_empty());
        assert!(acts.iter().all(|x| matches!(x, BorderAction::Unsubscribe { .. })));
        assert_eq!(subs.cells("B").unwrap().len(), n - acts.len());

        // endpoint change reconnects
        a.neighbors[0] = mec("B", 1300.0, "b:2");
        let acts = subs.reconcile(&a, &g);
        assert_eq!(acts[0], BorderAction::Disconnect { neighbor: "B".into() });
        assert!(matches!(&acts[1], BorderAction::Connect(d) if d.broker_endpoint == "b:2"));

        a.neighbors.clear();
        assert_eq!(subs.reconcile(&a, &g), vec![BorderAction::Disconnect { neighbor: "B".into() }]);
        assert_eq!(subs.total_cells(), 0);
    }
}
