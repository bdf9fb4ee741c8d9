// args:
int G;
void bump(int k) { G = G + k; }
int main(void) {
    bump(3);
    bump(4);
    return G;
}
