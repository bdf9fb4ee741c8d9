//! Unit-granularity TLB: one encrypted address block maps to one physical slot,
//! allocated first-come first-served.

use std::collections::HashMap;

use crate::cipher::Ciphertext;

pub const DEFAULT_CAPACITY: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("physical memory exhausted ({capacity} slots)")]
pub struct CapacityFault {
    pub capacity: usize,
}

#[derive(Debug, Clone)]
pub struct Tlb {
    map: HashMap<Ciphertext, usize>,
    next_free: usize,
    reclaimed: Vec<usize>,
    capacity: usize,
}

impl Default for Tlb {
    fn default() -> Tlb {
        Tlb::new(DEFAULT_CAPACITY)
    }
}

impl Tlb {
    pub fn new(capacity: usize) -> Tlb {
        Tlb {
            map: HashMap::new(),
            next_free: 0,
            reclaimed: Vec::new(),
            capacity,
        }
    }

    pub fn lookup(&self, addr: Ciphertext) -> Option<usize> {
        self.map.get(&addr).copied()
    }

    /// Existing mapping, or a newly bound slot. The cursor only advances;
    /// released slots are recycled once it reaches the capacity.
    pub fn translate(&mut self, addr: Ciphertext) -> Result<(usize, bool), CapacityFault> {
        if let Some(&slot) = self.map.get(&addr) {
            return Ok((slot, false));
        }
        let slot = if self.next_free < self.capacity {
            self.next_free += 1;
            self.next_free - 1
        } else if let Some(s) = self.reclaimed.pop() {
            s
        } else {
            return Err(CapacityFault {
                capacity: self.capacity,
            });
        };
        self.map.insert(addr, slot);
        Ok((slot, true))
    }

    /// Remove a mapping; absent mappings are ignored.
    pub fn invalidate(&mut self, addr: Ciphertext) -> Option<usize> {
        let slot = self.map.remove(&addr)?;
        self.reclaimed.push(slot);
        Some(slot)
    }

    /// Live mappings.
    pub fn occupancy(&self) -> usize {
        self.map.len()
    }

    pub fn next_free(&self) -> usize {
        self.next_free
    }

    pub fn mapped(&self) -> impl Iterator<Item = (Ciphertext, usize)> + '_ {
        self.map.iter().map(|(&a, &s)| (a, s))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_come_first_served() {
        let mut t = Tlb::default();
        assert_eq!(t.translate(Ciphertext(77)).unwrap(), (0, true));
        assert_eq!(t.translate(Ciphertext(77)).unwrap(), (0, false));
        assert_eq!(t.translate(Ciphertext(78)).unwrap(), (1, true));
    }

    #[test]
    fn invalidate_then_fresh_slot() {
        let mut t = Tlb::default();
        t.translate(Ciphertext(5)).unwrap();
        assert_eq!(t.invalidate(Ciphertext(5)), Some(0));
        assert_eq!(t.invalidate(Ciphertext(5)), None);
        assert_eq!(t.occupancy(), 0);
        assert_eq!(t.translate(Ciphertext(5)).unwrap(), (1, true));
    }

    #[test]
    fn recycles_only_at_capacity() {
        let mut t = Tlb::new(2);
        t.translate(Ciphertext(1)).unwrap();
        t.translate(Ciphertext(2)).unwrap();
        assert!(t.translate(Ciphertext(3)).is_err());
        t.invalidate(Ciphertext(1));
        assert_eq!(t.translate(Ciphertext(3)).unwrap(), (0, true));
    }
}
