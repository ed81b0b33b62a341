/** Long-poll stream consumption loop.
 *
 * Serialized by construction: one request in flight, messages applied in
 * order, and a detected gap triggers a full state refetch before the loop
 * continues (the at-least-once contract makes duplicates harmless).
 */

import type { AdvisorClient } from "./api.js";
import { afterResync, applyMessages, type ViewState } from "./state.js";

export interface StreamLoopHandle {
  stop(): void;
}

export function startStreamLoop(
  client: AdvisorClient,
  state: () => ViewState,
  update: (next: ViewState) => void,
  onError: (error: unknown) => void,
  timeoutS = 10,
): StreamLoopHandle {
  let running = true;

  async function loop(): Promise<void> {
    while (running) {
      try {
        const current = state();
        const response = await client.stream(current.scenarioId, current.lastSeq, timeoutS);
        if (!running) return;
        let next = applyMessages(current, response.messages);
        if (next.needsResync) {
          const fresh = await client.state(current.scenarioId);
          next = afterResync(next, fresh.version, response.last_seq);
        }
        update(next);
      } catch (error) {
        if (!running) return;
        onError(error);
        await new Promise((resolve) => setTimeout(resolve, 1000));
      }
    }
  }

  void loop();
  return {
    stop() {
      running = false;
    },
  };
}
