// Trailing-edge debounce: collapses a burst of calls into the final one.

export function debounce<A extends unknown[]>(
  fn: (...args: A) => void,
  delayMs = 150,
): (...args: A) => void {
  let timer: ReturnType<typeof setTimeout> | null = null;
  return (...args: A) => {
    if (timer !== null) clearTimeout(timer);
    timer = setTimeout(() => {
      timer = null;
      fn(...args);
    }, delayMs);
  };
}
