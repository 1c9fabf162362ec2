import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    environment: "node",
    include: ["tests/**/*.test.ts"],
    // The live-gateway test trains real models between assertions.
    testTimeout: 180_000,
    hookTimeout: 180_000,
  },
});
