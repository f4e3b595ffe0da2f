import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["tests/**/*.test.ts"],
    // the integration suite trains nothing but does run real attribution
    // jobs against a spawned service, so give it room
    testTimeout: 120_000,
    hookTimeout: 120_000,
  },
});
