//! Direct addressing: handles are block addresses and objects never move.

use compact_fit::{Addressing, Heap, HeapConfig, HeapError, Limit};

fn main() -> compact_fit::Result<()> {
    let mut heap = Heap::new(HeapConfig::new(1 << 20).direct())?;
    let a = heap.alloc_bytes(b"pinned")?;
    let b = heap.alloc(100)?;
    println!("a at address {:#x}, b at {:#x}", heap.address(a)?, heap.address(b)?);
    let before = heap.address(a)?;
    heap.free(b)?;
    assert_eq!(heap.address(a)?, before);

    // moving objects needs the handle table
    let bad = HeapConfig::new(1 << 20).addressing(Addressing::Direct).kappa(Limit::Finite(2));
    match Heap::new(bad) {
        Err(HeapError::Config(msg)) => println!("rejected: {msg}"),
        Err(e) => return Err(e),
        Ok(_) => unreachable!("direct addressing with a finite bound"),
    }
    Ok(())
}
