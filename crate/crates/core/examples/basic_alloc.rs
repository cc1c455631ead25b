//! Allocate, write, read and free a few objects.

use compact_fit::{Heap, HeapConfig};

fn main() -> compact_fit::Result<()> {
    let mut heap = Heap::new(HeapConfig::new(4 << 20))?;

    let greeting = heap.alloc_bytes(b"hello, bounded heap")?;
    let counter = heap.alloc(8)?;
    heap.write(counter, 0, &42u64.to_le_bytes())?;

    let mut buf = vec![0u8; 19];
    heap.read(greeting, 0, &mut buf)?;
    println!("{}", String::from_utf8_lossy(&buf));

    let mut word = [0u8; 8];
    heap.read(counter, 0, &mut word)?;
    println!("counter = {}", u64::from_le_bytes(word));
    println!("usable sizes: {} and {} bytes", heap.usable_size(greeting)?, heap.usable_size(counter)?);

    heap.free(greeting)?;
    heap.free(counter)?;
    if let Err(e) = heap.free(counter) {
        println!("second free rejected: {e}");
    }

    let s = heap.stats();
    println!("allocs {} frees {} pages in use {}", s.allocs, s.frees, s.pages_in_use);
    heap.audit().expect("heap is consistent");
    Ok(())
}
