use std::collections::VecDeque;
use std::sync::Mutex;

pub const DEFAULT_LOG_LINES: usize = 2000;

/// Bounded buffer of output lines; the oldest line is evicted first.
#[derive(Debug)]
pub struct LogRing {
    capacity: usize,
    inner: Mutex<Ring>,
}

#[derive(Debug, Default)]
struct Ring {
    lines: VecDeque<String>,
    evicted: u64,
}

impl LogRing {
    pub fn new(capacity: usize) -> Self {
        LogRing {
            capacity: capacity.max(1),
            inner: Mutex::new(Ring::default()),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&self, line: impl Into<String>) {
        let mut ring = self.inner.lock().expect("log ring poisoned");
        if ring.lines.len() == self.capacity {
            ring.lines.pop_front();
            ring.evicted += 1;
        }
        ring.lines.push_back(line.into());
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("log ring poisoned").lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Lines dropped so far to respect the capacity.
    pub fn evicted(&self) -> u64 {
        self.inner.lock().expect("log ring poisoned").evicted
    }

    /// The last `n` lines, oldest first.
    pub fn tail(&self, n: usize) -> Vec<String> {
        let ring = self.inner.lock().expect("log ring poisoned");
        let skip = ring.lines.len().saturating_sub(n);
        ring.lines.iter().skip(skip).cloned().collect()
    }

    pub fn lines(&self) -> Vec<String> {
        self.tail(usize::MAX)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evicts_oldest_first() {
        let ring = LogRing::new(3);
        for i in 0..5 {
            ring.push(format!("l{i}"));
        }
        assert_eq!(ring.lines(), ["l2", "l3", "l4"]);
        assert_eq!(ring.tail(2), ["l3", "l4"]);
        assert_eq!(ring.evicted(), 2);
    }
}
