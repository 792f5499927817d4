use crate::netcore::tape::mean_of_slices;
use crate::scalar::Real;

/// One buffered frame: recurrent states after the frame, its decoded
/// keypoints and its view embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct Slot<T> {
    pub h_enc: Vec<T>,
    pub h_dec: Vec<T>,
    pub keypoints: Vec<T>,
    pub view: Vec<T>,
}

/// Fixed-capacity circular buffer of the most recent `W` frames. All slots
/// are allocated at construction; a push overwrites one slot in place.
#[derive(Clone, Debug)]
pub struct RingBuffer<T> {
    slots: Vec<Slot<T>>,
    cursor: usize,
    filled: usize,
    pushes: u64,
    slot_allocations: usize,
}

impl<T: Real> RingBuffer<T> {
    pub fn new(capacity: usize, hidden: usize, keypoint_dim: usize, view_dim: usize) -> Self {
        assert!(capacity > 0, "ring buffer capacity must be positive");
        let slot = Slot {
            h_enc: vec![T::zero(); hidden],
            h_dec: vec![T::zero(); hidden],
            keypoints: vec![T::zero(); keypoint_dim],
            view: vec![T::zero(); view_dim],
        };
        let slots = vec![slot; capacity];
        Self { slot_allocations: slots.len(), slots, cursor: 0, filled: 0, pushes: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.slots.len()
    }

    pub fn len(&self) -> usize {
        self.filled
    }

    pub fn is_empty(&self) -> bool {
        self.filled == 0
    }

    /// Number of slots ever allocated.
    pub fn slot_allocations(&self) -> usize {
        self.slot_allocations
    }

    pub fn total_pushes(&self) -> u64 {
        self.pushes
    }

    /// Overwrite the oldest slot. Panics if a slice length differs from the
    /// widths given at construction.
    pub fn push(&mut self, h_enc: &[T], h_dec: &[T], keypoints: &[T], view: &[T]) {
        let slot = &mut self.slots[self.cursor];
        slot.h_enc.copy_from_slice(h_enc);
        slot.h_dec.copy_from_slice(h_dec);
        slot.keypoints.copy_from_slice(keypoints);
        slot.view.copy_from_slice(view);
        self.cursor = (self.cursor + 1) % self.slots.len();
        self.filled = (self.filled + 1).min(self.slots.len());
        self.pushes += 1;
    }

    /// Buffered slots, oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Slot<T>> {
        let cap = self.slots.len();
        let start = (self.cursor + cap - self.filled) % cap;
        (0..self.filled).map(move |i| &self.slots[(start + i) % cap])
    }

    pub fn newest(&self) -> Option<&Slot<T>> {
        self.iter().last()
    }

    /// Mean of buffered keypoints, accumulated oldest first; zeros when
    /// empty.
    pub fn context_mean(&self, out: &mut [T]) {
        if self.filled == 0 {
            out.iter_mut().for_each(|v| *v = T::zero());
            return;
        }
        // At most `capacity` borrowed slices; no per-frame heap growth.
        let parts: Vec<&[T]> = self.iter().map(|s| s.keypoints.as_slice()).collect();
        mean_of_slices(&parts, out);
    }
}
