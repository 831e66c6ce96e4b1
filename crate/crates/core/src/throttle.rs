//! Artificial back-end latency used to model a resource-limited database.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

/// Every store query passes through [`StoreThrottle::query`]. With a non-zero
/// latency each query occupies one of `connections` slots for that long, so
/// aggregate query throughput is capped at `connections / latency`.
#[derive(Debug)]
pub struct StoreThrottle {
    latency: Duration,
    connections: usize,
    in_use: Mutex<usize>,
    freed: Condvar,
}

impl StoreThrottle {
    pub fn new(latency: Duration, connections: usize) -> Self {
        Self {
            latency,
            connections: connections.max(1),
            in_use: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn disabled() -> Self {
        Self::new(Duration::ZERO, 1)
    }

    pub fn latency(&self) -> Duration {
        self.latency
    }

    pub fn query<R>(&self, f: impl FnOnce() -> R) -> R {
        if self.latency.is_zero() {
            return f();
        }
        {
            let mut in_use = self.in_use.lock().expect("throttle poisoned");
            while *in_use >= self.connections {
                in_use = self.freed.wait(in_use).expect("throttle poisoned");
            }
            *in_use += 1;
        }
        std::thread::sleep(self.latency);
        let out = f();
        *self.in_use.lock().expect("throttle poisoned") -= 1;
        self.freed.notify_one();
        out
    }
}

impl Default for StoreThrottle {
    fn default() -> Self {
        Self::disabled()
    }
}
