import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    // child processes instead of worker threads: the forward-pass and
    // checkpoint tests want the full default heap
    pool: "forks",
  },
});
