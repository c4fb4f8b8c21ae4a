import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    environment: "jsdom",
    include: ["tests/**/*.test.ts"],
    // the round-trip test spawns the real labeling service
    testTimeout: 240_000,
    hookTimeout: 240_000,
    fileParallelism: false,
  },
});
