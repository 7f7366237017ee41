import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["test/**/*.test.ts"],
    // the overfit test trains for 200 epochs on the CPU backend
    testTimeout: 600_000,
    hookTimeout: 120_000,
    pool: "forks",
    maxConcurrency: 1,
  },
});
