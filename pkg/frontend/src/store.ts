/**
 * Client-side persistence. The browser backend is IndexedDB with the three
 * object stores "processedData", "configuration", and "sessionData"; the
 * in-memory backend keeps the same shape for tests and headless runs.
 */

export const DB_NAME = "fedview";
export const STORE_NAMES = ["processedData", "configuration", "sessionData"] as const;
export type StoreName = (typeof STORE_NAMES)[number];

export interface ClientStore {
  put(store: StoreName, key: string, value: unknown): Promise<void>;
  get(store: StoreName, key: string): Promise<unknown | undefined>;
  getAll(store: StoreName): Promise<unknown[]>;
  count(store: StoreName): Promise<number>;
  clear(store: StoreName): Promise<void>;
}

export class MemoryStore implements ClientStore {
  private stores = new Map<StoreName, Map<string, unknown>>(
    STORE_NAMES.map((name) => [name, new Map()]),
  );

  async put(store: StoreName, key: string, value: unknown): Promise<void> {
    this.stores.get(store)!.set(key, value);
  }

  async get(store: StoreName, key: string): Promise<unknown | undefined> {
    return this.stores.get(store)!.get(key);
  }

  async getAll(store: StoreName): Promise<unknown[]> {
    return [...this.stores.get(store)!.values()];
  }

  async count(store: StoreName): Promise<number> {
    return this.stores.get(store)!.size;
  }

  async clear(store: StoreName): Promise<void> {
    this.stores.get(store)!.clear();
  }
}

/** IndexedDB-backed store; contents survive page reloads. */
export class IndexedDbStore implements ClientStore {
  private constructor(private db: IDBDatabase) {}

  static async open(dbName: string = DB_NAME): Promise<IndexedDbStore> {
    const db = await new Promise<IDBDatabase>((resolve, reject) => {
      const request = indexedDB.open(dbName, 1);
      request.onupgradeneeded = () => {
        for (const name of STORE_NAMES) {
          if (!request.result.objectStoreNames.contains(name)) {
            request.result.createObjectStore(name);
          }
        }
      };
      request.onsuccess = () => resolve(request.result);
      request.onerror = () => reject(request.error);
    });
    return new IndexedDbStore(db);
  }

  private tx<T>(store: StoreName, mode: IDBTransactionMode,
                run: (s: IDBObjectStore) => IDBRequest<T>): Promise<T> {
    return new Promise((resolve, reject) => {
      const request = run(this.db.transaction(store, mode).objectStore(store));
      request.onsuccess = () => resolve(request.result);
      request.onerror = () => reject(request.error);
    });
  }

  async put(store: StoreName, key: string, value: unknown): Promise<void> {
    await this.tx(store, "readwrite", (s) => s.put(value, key));
  }

  get(store: StoreName, key: string): Promise<unknown | undefined> {
    return this.tx(store, "readonly", (s) => s.get(key));
  }

  getAll(store: StoreName): Promise<unknown[]> {
    return this.tx(store, "readonly", (s) => s.getAll());
  }

  count(store: StoreName): Promise<number> {
    return this.tx(store, "readonly", (s) => s.count());
  }

  async clear(store: StoreName): Promise<void> {
    await this.tx(store, "readwrite", (s) => s.clear());
  }
}
